"""Serenade: conversão de estilo de canto por preenchimento de áudio (escala de bancada)."""

__version__ = "1.0.0"

# Versões dos formatos binários gravados pelo toolkit
SRNF_VERSION = 1
SRNW_VERSION = 1
SRNC_VERSION = 1
