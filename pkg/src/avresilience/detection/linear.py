"""Logistic regression trained by full-batch gradient descent."""
from __future__ import annotations

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticRegression:
    def __init__(self, iterations: int = 1000, learning_rate: float = 0.5, l2: float = 0.0):
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.l2 = l2
        self.weights: np.ndarray | None = None
        self.bias = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> "LogisticRegression":
        # convex objective from a zero start: no randomness, seed is accepted for interface parity
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        yf = y.astype(float)
        for _ in range(self.iterations):
            err = sigmoid(X @ w + b) - yf
            w -= self.learning_rate * (X.T @ err / n + self.l2 * w)
            b -= self.learning_rate * err.mean()
        self.weights, self.bias = w, float(b)
        return self

    def abnormality(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(X @ self.weights + self.bias)

    def memory(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    def load_memory(self, memory: dict) -> None:
        self.weights = np.asarray(memory["weights"], dtype=float)
        self.bias = float(memory["bias"])
