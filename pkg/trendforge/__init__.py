"""TrendForge: clasificacion de tendencia de Bitcoin con indicadores tecnicos y GBDT."""

__version__ = "0.1.0"
