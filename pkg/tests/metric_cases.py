"""Hand-computed metric cases. Items are letters; x, y, z, w are never relevant."""

import math

# (recommended, relevant, k, recall, literal DCG, normalized NDCG)
CASES = [
    ("abc", "ab", 3, 1.0, 1.0 + 1.0 / math.log2(3), 1.0),
    ("axy", "ab", 3, 0.5, 1.0, 1.0 / (1.0 + 1.0 / math.log2(3))),
    ("xyz", "ab", 3, 0.0, 0.0, 0.0),
    ("axb", "ab", 3, 1.0, 1.5, 1.5 / (1.0 + 1.0 / math.log2(3))),
    ("xyab", "ab", 2, 0.0, 0.0, 0.0),
    ("abcd", "bcde", 4, 0.75, 1.0 / math.log2(3) + 0.5 + 1.0 / math.log2(5),
     (1.0 / math.log2(3) + 0.5 + 1.0 / math.log2(5)) / (1.0 + 1.0 / math.log2(3) + 0.5 + 1.0 / math.log2(5))),
    ("xa", "a", 2, 1.0, 1.0 / math.log2(3), 1.0 / math.log2(3)),
    ("abcd", "abcd", 4, 1.0, 1.0 + 1.0 / math.log2(3) + 0.5 + 1.0 / math.log2(5), 1.0),
    ("ab", "abc", 2, 2.0 / 3.0, 1.0 + 1.0 / math.log2(3), 1.0),
    ("xyzd", "d", 4, 1.0, 1.0 / math.log2(5), 1.0 / math.log2(5)),
    ("a", "a", 1, 1.0, 1.0, 1.0),
    ("xaby", "ab", 4, 1.0, 1.0 / math.log2(3) + 0.5, (1.0 / math.log2(3) + 0.5) / (1.0 + 1.0 / math.log2(3))),
    ("abcdefgh", "h", 3, 0.0, 0.0, 0.0),
]
