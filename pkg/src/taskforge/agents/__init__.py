"""Demonstration agents: planning with refinement, reward-search RL and the hybrid agent."""
