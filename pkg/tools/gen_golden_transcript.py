"""Regenerate the checked-in golden stub transcript.

Run after any deliberate protocol change:

    python tools/gen_golden_transcript.py
"""

from pathlib import Path

from clozetag.bridge import build_golden_transcript, canonical_json


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "protocol" / "golden_stub_transcript.jsonl"
    out.parent.mkdir(exist_ok=True)
    lines = [canonical_json(entry) for entry in build_golden_transcript()]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} exchanges to {out}")


if __name__ == "__main__":
    main()
