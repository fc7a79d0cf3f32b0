# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

from .cli import cli_entrypoint

if __name__ == '__main__':
    cli_entrypoint()
