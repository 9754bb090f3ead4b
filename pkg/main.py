import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

from app.cli import main  # noqa: E402


def serve(port: int = 8000):
    """Run the HTTP service"""
    import uvicorn

    uvicorn.run("main:app", app_dir=os.path.join(os.path.dirname(__file__), 'backend'), host="0.0.0.0", port=port)


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "serve":
        serve(int(sys.argv[2]) if len(sys.argv) > 2 else 8000)
    else:
        sys.exit(main())
