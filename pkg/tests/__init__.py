"""Tests for meshdiff."""
