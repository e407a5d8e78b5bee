"""Trace how CVE-referenced vulnerabilities propagate across OSV ecosystems."""

__version__ = "0.1.0"
