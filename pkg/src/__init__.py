"""Top-K logprob hallucination detection: EPR, WEPR and the evaluation protocol."""
