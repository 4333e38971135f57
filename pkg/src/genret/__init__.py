"""Noise-robust generative retrieval: semantic docids, a numpy seq2seq retriever,
trie-constrained beam search, ASR-style augmentation and contrastive pretraining."""

__version__ = "0.1.0"
