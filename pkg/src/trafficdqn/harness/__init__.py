"""Experiment harness: configs, rollouts, baselines, green-wave detection, rendering and CLI."""
