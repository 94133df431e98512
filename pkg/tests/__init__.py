"""Tests for indexnet."""
