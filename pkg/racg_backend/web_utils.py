import logging
from typing import List, Optional

import html2text
import requests

logger = logging.getLogger(__name__)


def html_to_text(html: str) -> str:
    """Converts an HTML page to markdown-like plain text."""
    converter = html2text.HTML2Text()
    converter.body_width = 0  # no hard wrapping; paragraphs stay on one line
    converter.ignore_images = True
    converter.ignore_links = True
    return converter.handle(html)


def strip_list_lines(text: str) -> str:
    """Drops lines starting with '*', which on search result pages are mostly unrelated item listings."""
    return "\n".join(line for line in text.splitlines() if not line.lstrip().startswith("*"))


class WebFetcher:
    """Search + fetch over HTTP.

    The search endpoint is any service answering GET ?q=<query>&n=<top_n> with
    JSON {"results": [{"url": ...}, ...]}.
    """

    def __init__(self, search_url: Optional[str], timeout_s: float = 20.0):
        self.search_url = search_url
        self.timeout_s = timeout_s

    def search(self, query: str, top_n: int) -> List[str]:
        if not self.search_url:
            logger.warning("Web search requested but no search_url is configured.")
            return []
        response = requests.get(self.search_url, params={"q": query, "n": top_n}, timeout=self.timeout_s)
        response.raise_for_status()
        results = response.json().get("results", [])
        return [r["url"] for r in results if isinstance(r, dict) and r.get("url")]

    def fetch(self, url: str) -> str:
        response = requests.get(url, timeout=self.timeout_s)
        response.raise_for_status()
        return response.text
