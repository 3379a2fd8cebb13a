"""Command line entry point: scorer-server / python -m scorer_server."""

import argparse
import logging

from .backends import make_backend
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scorer-server",
        description="Serve noise predictions over the refinement protocol")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8763)
    parser.add_argument("--model-id",
                        default="runwayml/stable-diffusion-v1-5",
                        help="pretrained latent-diffusion checkpoint")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--cfg-scale", type=float, default=7.5,
                        help="classifier-free guidance scale")
    parser.add_argument("--echo", action="store_true",
                        help="return the request's noise verbatim "
                             "(no model weights needed)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    backend = make_backend(args.echo, args.model_id, args.device,
                           args.cfg_scale)
    try:
        serve(args.host, args.port, backend)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
