"""Gateway entry point: pick a config, bind a port, serve until interrupted."""

from __future__ import annotations

import sys

import click
import uvicorn

from openavs_gateway.app import create_app
from openavs_gateway.config import GatewayConfig


@click.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--mode", type=click.Choice(["stub", "real"]), default="stub",
              help="built-in config when no --config file is given")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8090)
def main(config_path, mode, host, port):
    if config_path:
        config = GatewayConfig.from_file(config_path)
    elif mode == "real":
        config = GatewayConfig.real()
    else:
        config = GatewayConfig.stub()
    app = create_app(config)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit as e:
        # uvicorn exits 1 on bind failure; surface it as a config error
        if e.code:
            click.echo(f"error: cannot serve on {host}:{port}", err=True)
            sys.exit(2)


if __name__ == "__main__":
    main()
