# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Test suite for the perturb_grn package."""
