"""
fsilab: spring-mounted rigid body in a viscous stream
Command-line entry point
"""

import logging
import sys

from src.cli import run
from src.config import settings, validate_settings

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

def main() -> int:
    try:
        validate_settings()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    return run(sys.argv[1:])

if __name__ == "__main__":
    sys.exit(main())
