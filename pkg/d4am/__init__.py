"""
D4AM desk-scale: entrenamiento conjunto de un realzador (enhancer) con calibración
de gradiente y prior sustituto sobre actualizaciones de Langevin.

Punto de entrada CLI: d4am
Comandos: run (matriz de ablación, grid search, estudio de sobreajuste).
"""

__version__ = "0.3.0"
