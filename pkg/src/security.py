import hmac
import logging
from typing import Optional

from src.grad_config import Settings

logger = logging.getLogger(__name__)

# API Key header
API_KEY_NAME = "X-API-Key"


def validate_api_key(api_key: Optional[str]) -> bool:
    """
    Validate the API key sent in the X-API-Key header against GRAD_API_KEY

    Args:
        api_key: API key from request header

    Returns:
        True if valid, False otherwise (always False when no key is configured)
    """
    expected = Settings.from_env().api_key
    if not expected:
        logger.warning("[Security] GRAD_API_KEY is not set; rejecting request")
        return False
    if not api_key:
        return False

    return hmac.compare_digest(api_key, expected)
