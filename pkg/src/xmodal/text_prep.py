"""Cleanup of Freesound-style descriptions and tag lists."""
import re
from dataclasses import dataclass, field

MAX_CHARS = 500

_TAG = re.compile(r"<[^>]*>")
_ENTITY = re.compile(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[A-Za-z]+);")
_SPACE = re.compile(r"\s+")

NAMED_ENTITIES = {
    "amp": "&",
    "lt": "<",
    "gt": ">",
    "quot": '"',
    "apos": "'",
    "nbsp": "\u00a0",
}


@dataclass(frozen=True)
class RawTextRecord:
    item_id: str
    description: str
    tags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        tags = tuple(t.strip() for t in self.tags)
        object.__setattr__(self, "tags", tuple(t for t in tags if t))


def _decode(match):
    body = match.group(1)
    if body[0] != "#":
        # unknown named entities are dropped so no entity survives cleaning
        return NAMED_ENTITIES.get(body, "")
    code = int(body[2:], 16) if body[1] in "xX" else int(body[1:])
    if code == 0 or code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
        return ""
    return chr(code)


def strip_markup(text):
    """Remove tags and decode entities until nothing changes, collapsing whitespace."""
    while True:
        out = _TAG.sub(" ", text)
        out = _ENTITY.sub(_decode, out)
        out = _SPACE.sub(" ", out).strip()
        if out == text:
            return out
        text = out


def clean_description(text, max_chars=MAX_CHARS):
    """Strip HTML from ``text`` and keep at most ``max_chars`` characters.

    Truncation counts code points and may cut mid-word.

    >>> clean_description("<b>dog bark</b>")
    'dog bark'
    >>> clean_description("a &amp; b")
    'a & b'
    """
    return strip_markup(text)[:max_chars].rstrip()


def was_truncated(text, max_chars=MAX_CHARS):
    return len(strip_markup(text)) > max_chars


def join_tags(tags):
    """Join tags with single spaces in the given order.

    >>> join_tags(["click", "keyboard", "typing"])
    'click keyboard typing'
    """
    return " ".join(tags)
