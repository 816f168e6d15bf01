"""
Token flag reports for scored records: ANSI terminal text, standalone HTML and JSON.

Flagged tokens (hallucination score strictly above the threshold) are drawn in
red with intensity (score - threshold) / (1 - threshold); other tokens are left
as plain text.
"""

import html
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

try:
    from .exceptions import DomainError
    from .logprob_model import dumps_line
    from .wepr import ORIENTATIONS, hallucination_scores
except ImportError:
    from exceptions import DomainError
    from logprob_model import dumps_line
    from wepr import ORIENTATIONS, hallucination_scores

logger = logging.getLogger(__name__)

FORMATS = ('ansi', 'html', 'json')

ANSI_RESET = "\033[0m"

HTML_HEADER = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Token hallucination flags</title>
<style>
body { font-family: sans-serif; line-height: 1.6; margin: 2em; }
.record { margin-bottom: 1.5em; }
.query { color: #555; font-size: 0.9em; }
</style>
</head>
<body>
"""

HTML_FOOTER = """</body>
</html>
"""


@dataclass(frozen=True)
class TokenFlags:
    """Per-token flag view of one scored record."""
    query_id: str
    query_text: str
    tokens: Tuple[str, ...]
    token_scores: Tuple[float, ...]
    hallucination_scores: Tuple[float, ...]
    flags: Tuple[bool, ...]


def intensity(score: float, threshold: float) -> float:
    """Red intensity in [0, 1]; 0 for unflagged tokens."""
    if score <= threshold:
        return 0.0
    return min(1.0, (score - threshold) / (1.0 - threshold))


def token_flags(record: Dict[str, Any], threshold: float = 0.5) -> TokenFlags:
    """Build the flag view of a scored record; DomainError if it carries no token scores."""
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    query_id = record.get('query_id', '')
    if 'token_scores' not in record or 'tokens' not in record:
        raise DomainError(f"record {query_id!r} has no token_scores; score it with a model first")
    tokens = tuple(record['tokens'])
    token_scores = tuple(float(s) for s in record['token_scores'])
    if len(tokens) != len(token_scores):
        raise DomainError(f"record {query_id!r}: {len(tokens)} tokens but {len(token_scores)} token_scores")
    orientation = record.get('orientation')
    if orientation not in ORIENTATIONS:
        raise DomainError(f"record {query_id!r}: unknown orientation {orientation!r}")

    scores = hallucination_scores(token_scores, orientation)
    return TokenFlags(
        query_id=query_id,
        query_text=record.get('query', ''),
        tokens=tokens,
        token_scores=token_scores,
        hallucination_scores=scores,
        flags=tuple(s > threshold for s in scores),
    )


def render_ansi(views: Sequence[TokenFlags], threshold: float = 0.5) -> str:
    lines = []
    for view in views:
        parts = []
        for token, score in zip(view.tokens, view.hallucination_scores):
            level = intensity(score, threshold)
            if level == 0.0:
                parts.append(token)
                continue
            fade = round(255 * (1.0 - level))
            parts.append(f"\033[38;2;255;{fade};{fade}m{token}{ANSI_RESET}")
        lines.append(''.join(parts))
    return '\n'.join(lines) + '\n' if lines else ''


def _html_token(token: str, token_score: float, score: float, threshold: float) -> str:
    title = f"σ(S_β) = {token_score:.4f}"
    level = intensity(score, threshold)
    if level == 0.0:
        return f'<span title="{title}">{html.escape(token)}</span>'
    return (f'<span title="{title}" style="background-color: rgba(255, 0, 0, {level:.3f})">'
            f'{html.escape(token)}</span>')


def render_html(views: Sequence[TokenFlags], threshold: float = 0.5) -> str:
    """Standalone HTML document with inline styles and per-token tooltips."""
    body: List[str] = []
    for view in views:
        spans = ''.join(_html_token(token, raw, score, threshold)
                        for token, raw, score in zip(view.tokens, view.token_scores, view.hallucination_scores))
        body.append(f'<div class="record" id="{html.escape(view.query_id)}">\n'
                    f'<p class="query">{html.escape(view.query_text)}</p>\n'
                    f'<p class="answer">{spans}</p>\n'
                    f'</div>\n')
    return HTML_HEADER + ''.join(body) + HTML_FOOTER


def render_json(views: Sequence[TokenFlags], threshold: float = 0.5) -> str:
    """One JSON object of flag arrays per record."""
    lines = [dumps_line({
        'query_id': view.query_id,
        'tokens': list(view.tokens),
        'hallucination_scores': list(view.hallucination_scores),
        'flags': list(view.flags),
        'threshold': threshold,
    }) for view in views]
    return ''.join(line + '\n' for line in lines)


_RENDERERS = {
    'ansi': render_ansi,
    'html': render_html,
    'json': render_json,
}


def render_report(records: Sequence[Dict[str, Any]], fmt: str = 'ansi', threshold: float = 0.5) -> str:
    if fmt not in _RENDERERS:
        raise DomainError(f"unknown report format {fmt!r}, expected one of {FORMATS}")
    views = [token_flags(record, threshold) for record in records]
    flagged = sum(sum(v.flags) for v in views)
    logger.info(f"Rendering {len(views)} records as {fmt}: {flagged} flagged tokens")
    return _RENDERERS[fmt](views, threshold)
