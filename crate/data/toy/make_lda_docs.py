"""Regenerates lda_docs.txt: short posts drawn from six themes plus common words.

Deterministic (fixed seed); run from this directory with `python3 make_lda_docs.py`.
"""
import random

THEMES = {
    "food": "pizza cheese pasta soup salty spicy noodles bread baked coffee tea honey cook dinner eat food fresh water".split(),
    "weather": "rain raining umbrella sun sunny hot shade snow snowman wind windows forecast skies winter cold fire cozy".split(),
    "sports": "game team won goal striker scored football coach match basketball season runs running fit minute played".split(),
    "music": "song songs singer voice guitar concert loud music jazz piano band album practice beautiful sounds".split(),
    "pets": "cat cats sleep sleeps dog walk park puppy puppies cute bird birds sing dawn".split(),
    "school": "exam study homework teacher math test passed school books learning early hard".split(),
}
COMMON = "the is a to and i you my it so we in on for with this".split()

rng = random.Random(20170206)
users = [f"u{i:02d}" for i in range(12)]
lines = []
for d in range(360):
    theme = list(THEMES)[d % len(THEMES)] if d < 300 else rng.choice(list(THEMES))
    n = rng.randint(5, 10)
    words = [rng.choice(COMMON) if rng.random() < 0.35 else rng.choice(THEMES[theme]) for _ in range(n)]
    lines.append(f"{rng.choice(users)}\t{' '.join(words)}")
with open("lda_docs.txt", "w") as f:
    f.write("\n".join(lines) + "\n")
