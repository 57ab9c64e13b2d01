"""Occlusion-aware pose inference over unrolled loopy part graphs."""
