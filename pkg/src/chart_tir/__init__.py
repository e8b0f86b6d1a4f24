"""Tool-integrated chart reasoning: rollouts with crop and code tools, gated
rewards, GRPO kernels, data synthesis and benchmark evaluation."""

__version__ = "0.1.0"
