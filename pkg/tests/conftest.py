"""
Shared fixtures for pytest.

This file provides reusable, modular data for use across all test files:
small graphs with known structure, random hash tables and a desk-scale run
configuration that trains in seconds.
"""
from pathlib import Path

import numpy as np
import pytest

from src.config import RunConfig, load_run_config
from src.models import BipartiteGraph, HashTable
from src.services.evaluation import planted_graph
from src.services.hashing import random_table

# --- Graph Fixtures ---

@pytest.fixture
def single_edge_graph() -> BipartiteGraph:
    """One V1 node linked to one V2 node."""
    return BipartiteGraph.from_edges(1, 1, np.array([[0, 0]]))


@pytest.fixture
def star_graph() -> BipartiteGraph:
    """V1 node 0 linked to all five V2 nodes; V1 node 1 is isolated."""
    edges = np.array([[0, v] for v in range(5)])
    return BipartiteGraph.from_edges(2, 5, edges)


@pytest.fixture
def random_graph() -> BipartiteGraph:
    """20 x 30 Erdos-Renyi bipartite graph."""
    rng = np.random.default_rng(7)
    rows, cols = np.nonzero(rng.random((20, 30)) < 0.15)
    return BipartiteGraph.from_edges(20, 30, np.stack([rows, cols], axis=1))


@pytest.fixture
def small_planted_graph() -> BipartiteGraph:
    """4 blocks of 10 nodes per side, dense inside blocks."""
    return planted_graph(blocks=4, nodes_per_block=10, p_in=0.5, p_out=0.02, seed=1)


# --- Hash Table Fixtures ---

@pytest.fixture
def random_hash_table() -> HashTable:
    """40 queries, 60 candidates, d=70 (not a multiple of 64), L=2."""
    return random_table(n1=40, n2=60, d=70, num_layers=2, seed=3)


# --- Run Config Fixtures ---

def make_run_config(out_dir: Path, *overrides: str) -> RunConfig:
    """Desk-scale planted run; extra `key=value` overrides win."""
    base = [
        f"output.dir={out_dir}",
        "planted.blocks=4",
        "planted.nodes_per_block=10",
        "planted.p_in=0.5",
        "planted.p_out=0.02",
        "model.d=16",
        "model.layers=2",
        "train.epochs=2",
        "train.batch_size=64",
        "estimator.n=8",
        "optim.lr=1e-2",
        "eval.topn=5,10",
    ]
    return load_run_config(None, [*base, *overrides])


@pytest.fixture
def small_run_config(tmp_path: Path) -> RunConfig:
    return make_run_config(tmp_path / "run")
