"""Visual-analogy embeddings: glyph corpus, quadruple Siamese encoder, retrieval."""
