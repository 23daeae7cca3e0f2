"""Regenerates expected.json from hyp.txt/ref.txt with sacrebleu and pyter3.

    pip install sacrebleu==2.6.0 pyter3==0.3
    python3 gen_expected.py > expected.json
"""
import json

import pyter
import sacrebleu
from sacrebleu.metrics import BLEU, CHRF


def lines(path):
    with open(path, encoding="utf-8") as f:
        return [l.rstrip("\n") for l in f]


hyp, ref = lines("hyp.txt"), lines("ref.txt")
out = {"sacrebleu_version": sacrebleu.__version__}

for tok in ("intl", "none"):
    for smooth in ("none", "exp"):
        s = BLEU(tokenize=tok, smooth_method=smooth).corpus_score(hyp, [ref])
        out[f"bleu_{tok}_{smooth}"] = {
            "score": s.score,
            "counts": s.counts,
            "totals": s.totals,
            "bp": s.bp,
            "sys_len": s.sys_len,
            "ref_len": s.ref_len,
        }

out["chrf"] = CHRF().corpus_score(hyp, [ref]).score
out["chrf_lowercase"] = CHRF(lowercase=True).corpus_score(hyp, [ref]).score

seg = []
edits = 0
ref_words = 0
for h, r in zip(hyp, ref):
    hw, rw = h.split(), r.split()
    t = pyter.ter(hw, rw)
    e = round(t * len(rw))
    seg.append({"ter": t, "edits": e, "ref_len": len(rw)})
    edits += e
    ref_words += len(rw)
out["ter_segments"] = seg
out["ter_corpus"] = edits / ref_words
out["ter_sentence_average"] = sum(s["ter"] for s in seg) / len(seg)

# short segments with missing higher-order matches, where smoothing matters
short_hyp = ["the cat sat", "on a mat today", "hello there"]
short_ref = ["the cat sat down", "on the mat", "hello world"]
for smooth in ("none", "exp"):
    s = BLEU(tokenize="none", smooth_method=smooth).corpus_score(short_hyp, [short_ref])
    out[f"short_bleu_{smooth}"] = {"score": s.score, "counts": s.counts, "totals": s.totals, "bp": s.bp}
out["short_hyp"] = short_hyp
out["short_ref"] = short_ref

print(json.dumps(out, indent=2, ensure_ascii=False))
