"""Recursive gated convolutions, HorNet backbones and their verification tools."""
