import numpy as np
import pytest

from reviewpulse.lda import TopicModel, infer_topics, tokenize, train_lda

DOCS = [["loop", "index", "bound"] * 4, ["docs", "typo", "readme"] * 4] * 10


def test_tokenize_drops_code_stopwords_and_short_tokens():
    assert tokenize("The loop is wrong:\n```py\nsecret()\n```\nsee `x`") == ["loop", "wrong", "see"]


def test_model_text_round_trip():
    m = train_lda(DOCS, 2, iterations=20, seed=3)
    again = TopicModel.from_text(m.to_text())
    assert again.to_text() == m.to_text()
    assert np.array_equal(again.topic_word, m.topic_word)


def test_rows_are_distributions_and_topics_separate():
    m = train_lda(DOCS, 2, iterations=50, seed=1)
    assert np.allclose(m.topic_word.sum(axis=1), 1.0, atol=1e-12)
    tops = [set(m.top_tokens(k, 3)) for k in range(2)]
    assert {"loop", "index", "bound"} in tops and {"docs", "typo", "readme"} in tops


def test_inference():
    m = train_lda(DOCS, 2, alpha=0.1, iterations=50, seed=1)
    theta = infer_topics(m, ["loop", "bound", "index"] * 5)
    assert abs(theta.sum() - 1.0) < 1e-12 and theta.max() > 0.9
    assert np.array_equal(theta, infer_topics(m, ["loop", "bound", "index"] * 5))
    assert np.allclose(infer_topics(m, ["unseen"]), [0.5, 0.5])


def test_seed_changes_the_chain():
    a = train_lda(DOCS, 3, iterations=10, seed=1).to_text()
    b = train_lda(DOCS, 3, iterations=10, seed=2).to_text()
    assert a != b


@pytest.mark.parametrize("corpus,K", [([], 2), ([["a"]], 1), ([[]], 2)])
def test_invalid_input(corpus, K):
    with pytest.raises(ValueError):
        train_lda(corpus, K)


def test_rejects_foreign_format():
    with pytest.raises(ValueError):
        TopicModel.from_text("something-else 1\n")
