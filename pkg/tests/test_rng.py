from recipekit.rng import RecordingRngStream, RngStream, stream_id, text_stream_id


def test_same_key_same_sequence():
    a, b = RngStream(5, 7), RngStream(5, 7)
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]


def test_distinct_streams_differ():
    assert RngStream(5, 7).random() != RngStream(5, 8).random()
    assert RngStream(5, 7).random() != RngStream(6, 7).random()


def test_stream_id_packs_epoch_and_index():
    assert stream_id(0, 3) == 3
    assert stream_id(2, 3) == (2 << 32) | 3
    assert stream_id(1, 0) != stream_id(0, 1)


def test_text_stream_id_is_stable_and_separating():
    assert text_stream_id("a", 1) == text_stream_id("a", 1)
    assert text_stream_id("a", 1) != text_stream_id("a1")
    assert 0 <= text_stream_id("x") < 2**64


def test_integers_upper_bound_exclusive():
    r = RngStream(1)
    assert all(0 <= r.integers(0, 3) < 3 for _ in range(200))


def test_bernoulli_consumes_one_draw_for_any_p():
    a, b = RngStream(2), RngStream(2)
    a.bernoulli(0.0)
    b.bernoulli(1.0)
    assert a.random() == b.random()


def test_recording_stream_logs_labels_and_matches_plain():
    rec, plain = RecordingRngStream(3, 4), RngStream(3, 4)
    assert rec.uniform(0, 1, label="u") == plain.uniform(0, 1)
    rec.integers(0, 9, label="i")
    assert rec.labels() == ["u", "i"]
