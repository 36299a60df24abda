"""Serve a fitted scene to the browser viewer.

Thin wrapper over the HTTP service that also mounts the built viewer
bundle, so one process serves both the API and the page. Build the viewer
once with `npm install && npm run build` in frontend/, then:

    python3 demos/serve_viewer.py --checkpoint runs/sphere/checkpoint

and open the printed URL. The page orbits, relights, and material-edits
the scene through the same /render endpoint the CLI uses.
"""

import argparse
from pathlib import Path

from gir.service import serve


def main() -> int:
    repo = Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser(description="serve a checkpoint plus the web viewer")
    ap.add_argument("--checkpoint", type=Path, default=Path("runs/sphere/checkpoint"))
    ap.add_argument("--static", type=Path, default=repo / "frontend" / "dist")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8000)
    args = ap.parse_args()

    static = args.static if (args.static / "index.html").exists() else None
    if static is None:
        print(f"viewer bundle not found at {args.static}; serving the API only")
        print("(build it with: cd frontend && npm install && npm run build)")
    serve(args.checkpoint, host=args.host, port=args.port, static_dir=static)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
