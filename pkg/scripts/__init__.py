"""
Scripts package for the HVS ISP.

Standalone helpers that build fixtures for the `hvsisp` command line.
"""
