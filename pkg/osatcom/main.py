import logging
import sys
from typing import List, Optional

from osatcom.cli.commands import dispatch
from osatcom.core.config import VERSION, get_settings

# Get settings
settings = get_settings()

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point"""
    logger.debug(f"osatcom {VERSION}, {settings.threads} worker thread(s)")
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
