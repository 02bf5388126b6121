import logging
from typing import Optional, List
from pathlib import Path

from pypdf import PdfReader
from docx import Document

logger = logging.getLogger(__name__)

PLAIN_TEXT_EXTENSIONS = {".txt", ".md", ".markdown", ".rst"}
SUPPORTED_EXTENSIONS = PLAIN_TEXT_EXTENSIONS | {".pdf", ".docx"}


def list_document_files(dir_path: Path) -> List[Path]:
    """Recursively lists supported documentation files, sorted for a stable ingest order."""
    return sorted(
        p for p in dir_path.rglob("*")
        if p.is_file() and p.suffix.lower() in SUPPORTED_EXTENSIONS
    )


def extract_text_from_file(file_path: str) -> Optional[str]:
    """Extracts text content from supported documentation files (txt, md, rst, pdf, docx).

    Args:
        file_path: The absolute or relative path to the file.

    Returns:
        The extracted text content as a string, or None if the file is
        not found, not supported, or extraction fails.
    """
    path = Path(file_path)

    if not path.is_file():
        logger.error(f"File not found at path: {file_path}")
        return None

    file_extension = path.suffix.lower()

    if file_extension not in SUPPORTED_EXTENSIONS:
        logger.warning(f"Unsupported file type for text extraction: {file_extension}")
        return None

    try:
        if file_extension in PLAIN_TEXT_EXTENSIONS:
            try:
                text = path.read_text(encoding="utf-8")
            except UnicodeDecodeError:
                logger.warning(f"UTF-8 decoding failed for {file_path}, trying latin-1.")
                text = path.read_text(encoding="latin-1")
            logger.debug(f"Extracted text from {file_path}")
            return text

        elif file_extension == ".pdf":
            reader = PdfReader(path)
            pages = [page.extract_text() or "" for page in reader.pages]
            logger.debug(f"Extracted text from PDF file: {file_path} ({len(reader.pages)} pages)")
            # Blank line between pages keeps them separate paragraphs
            return "\n\n".join(pages)

        elif file_extension == ".docx":
            document = Document(path)
            logger.debug(f"Extracted text from DOCX file: {file_path}")
            return "\n\n".join(para.text for para in document.paragraphs if para.text.strip())

    except Exception as e:
        logger.error(f"Error extracting text from {file_path} (type: {file_extension}): {e}", exc_info=True)
        return None

    return None
