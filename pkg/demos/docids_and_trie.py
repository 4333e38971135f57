"""
Semantic document identifiers and the decoding trie
===================================================

Documents are embedded with hashed character trigrams, clustered
recursively with k-means, and each one gets the digit path of its leaf
plus a position inside the leaf. Related documents share prefixes, and
the prefix trie over all docids is what constrains beam search.
"""

from collections import Counter

from genret.corpus import generate_synthetic_corpus
from genret.docid import build_docids, docid_string
from genret.trie import allowed_tokens, build_trie

corpus, queries, lexicon = generate_synthetic_corpus(seed=0, n_docs=200, n_queries_per_doc=5)
print(len(corpus), "documents,", len(corpus.vocabulary), "word types,", len(queries), "queries")

doc = corpus.documents[0]
print("title:", " ".join(doc.title))
print("body :", " ".join(doc.body[:20]), "...")
print("query:", " ".join(queries[0].text))

###############################################################################
# Build the docids. ``k`` is the branching factor, ``leaf_cap`` the largest
# cluster that is not split again.

docid_map, tree = build_docids(corpus, k=4, leaf_cap=8, seed=0)
print("tree depth", tree.depth(), "with", len(list(tree.leaves())), "leaves")
for i in range(5):
    print(corpus.documents[i].external_id, "->", docid_string(docid_map.forward[i]))

# documents generated from the same topic should tend to share a first digit
by_topic = {}
for i, d in enumerate(docid_map.forward):
    by_topic.setdefault(i % 10, Counter())[d[0]] += 1
print("first-digit histogram of topic 0:", dict(by_topic[0]))

###############################################################################
# The trie. Every path ends with the EOS token (id ``k``), so the decoder
# can only stop on a complete identifier.

trie = build_trie(docid_map)
print("trie nodes:", trie.node_count(), "terminals:", trie.n_terminals)
prefix = docid_map.forward[0][:2]
print("after prefix", prefix, "the allowed next tokens are", sorted(allowed_tokens(trie, prefix)))
