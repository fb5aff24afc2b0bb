"""Smoke test for the emphi_py extension.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import math

import emphi_py


def main():
    tokens = emphi_py.tokenize("I'm so sorry to hear that!")
    assert tokens[0] == "i", tokens
    assert "sorry" in tokens

    assert len(emphi_py.intent_names()) == 9

    hyp = "the cat sat".split()
    ref = "the cat sat on the mat".split()
    assert abs(emphi_py.bleu(hyp, ref) - math.exp(-1)) < 1e-9
    assert emphi_py.bleu(ref, ref) == 1.0

    d1 = emphi_py.distinct_n([["i", "am", "sad"], ["i", "am", "happy"]], 1)
    assert abs(d1 - 4 / 6) < 1e-12

    uniform = [1 / 9] * 9
    assert emphi_py.kl_divergence(uniform, uniform) == 0.0
    try:
        emphi_py.kl_divergence([1.0], uniform)
    except ValueError:
        pass
    else:
        raise AssertionError("malformed distribution accepted")

    vocab = emphi_py.Vocabulary.build([["hello", "world"], ["hello", "there"]])
    ids = vocab.encode(["hello", "unseen"])
    assert vocab.decode(ids)[0] == "hello"
    assert len(vocab) >= 3

    names = emphi_py.intent_names()
    texts, labels = [], []
    for i, name in enumerate(names):
        for j in range(4):
            texts.append(f"word{i}a word{i}b filler{j}")
            labels.append(name)
    table = emphi_py.extract_keywords(texts, labels, 2)
    for i, name in enumerate(names):
        words = {w for w, _ in table[name]}
        assert words == {f"word{i}a", f"word{i}b"}, (name, table[name])

    try:
        emphi_py.IntentClassifier.load("/nonexistent/classifier")
    except FileNotFoundError:
        pass
    else:
        raise AssertionError("missing classifier accepted")

    print("emphi_py smoke test passed")


if __name__ == "__main__":
    main()
