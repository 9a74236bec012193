from osatcom.core.config import get_settings


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("OSATCOM_THREADS", "3")
    assert get_settings().threads == 3


def test_non_positive_counts_clamp_to_one(monkeypatch):
    monkeypatch.setenv("OSATCOM_THREADS", "0")
    monkeypatch.setenv("OSATCOM_CHUNK_TRIALS", "-5")
    settings = get_settings()
    assert settings.threads == 1
    assert settings.chunk_trials == 1


def test_non_numeric_counts_fall_back_to_defaults(monkeypatch, caplog):
    monkeypatch.setenv("OSATCOM_THREADS", "many")
    monkeypatch.setenv("OSATCOM_CHUNK_TRIALS", "lots")
    settings = get_settings()
    assert settings.threads >= 1
    assert settings.chunk_trials == 4096
    assert "OSATCOM_THREADS" in caplog.text
