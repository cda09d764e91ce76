"""Testes do Serenade."""
