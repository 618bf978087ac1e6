"""Published full-scale results, carried as a static comparison column in reports.

These numbers come from full-size corpora and are not targets for the
desk-scale runs this package performs.
"""

COLUMN = "paper (full scale)"

# accuracy (%) before the attack and after deleting 1/5/10/15% of VERB+ADJ+NOUN tokens
TABLE2 = {
    "imdb": {"baseline": 97, "p1": 54, "p5": 73, "p10": 62, "p15": 61},
    "amazon": {"baseline": 91, "p1": 85, "p5": 70, "p10": 58, "p15": 43},
    "yelp": {"baseline": 92, "p1": 81, "p5": 55, "p10": 18, "p15": 15},
}

# IMDB accuracy (%) after the attack, per POS configuration and perturbation ratio
SWEEP_CONFIGS = ("VERB", "ADJ", "NOUN", "VERB_ADJ", "VERB_NOUN", "ADJ_NOUN", "VERB_ADJ_NOUN")
SWEEP = {
    1: (84, 82, 71, 79, 75, 86, 54),
    5: (82, 49, 80, 73, 76, 73, 73),
    10: (54, 88, 84, 77, 85, 78, 62),
    15: (87, 63, 86, 67, 83, 71, 61),
}
SWEEP_BEFORE_ATTACK = 97

# random-deletion study: 990 reviews x 100 replications, ten random words deleted each time
STUDY_ATTEMPTS = 99_000
STUDY_SUCCESSES = 12_873
STUDY_AT_LEAST_ONE = {"NOUN": 0.817, "VERB": 0.775, "ADJ": 0.684, "PRON": 0.688}

# successes with exactly c deleted tokens of each tag, c = 0..10
HISTOGRAM = {
    "NOUN": (1552, 2461, 2573, 1901, 1242, 788, 469, 380, 283, 224, 192),
    "VERB": (2703, 3945, 2660, 1441, 726, 432, 277, 217, 158, 77, 39),
    "ADJ": (3876, 3611, 2265, 1214, 672, 428, 259, 167, 97, 56, 31),
    "PRON": (3843, 3921, 2383, 1209, 568, 341, 208, 115, 68, 25, 17),
    "ADP": (4511, 3915, 2120, 1031, 538, 280, 169, 72, 45, 19, 9),
    "ADV": (5781, 3716, 1748, 767, 387, 161, 80, 43, 16, 6, 3),
    "DET": (5980, 3897, 1548, 693, 321, 162, 64, 30, 11, 4, 1),
    "AUX": (6301, 3742, 1565, 627, 275, 121, 52, 12, 14, 2, 0),
    "CCONJ": (7564, 3447, 1130, 384, 121, 42, 16, 5, 1, 0, 1),
    "PROPN": (8630, 2259, 948, 462, 203, 105, 53, 23, 16, 5, 4),
}
