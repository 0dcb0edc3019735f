"""Prompt catalog, golden system prompts, user-input assembly, reply parsing."""

from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openavs.errors import (
    MissingFrameError,
    MissingModalityError,
    NoAnswerTagsError,
    UnknownVariantError,
)
from openavs.model import AgentKind, Description, KnowledgeBank, PipelineConfig, Variant
from openavs.prompting import (
    TranslatorMode,
    assemble_clip_request,
    assemble_frame_request,
    extract_frame_texts,
    frame_tagged_user_input,
    media_prompt,
    model_consistency_user_input,
    parse_final_answer,
    parse_frame_answers,
    select_mode,
    translator_system_prompt,
)


def bank_with(entries, video_id="vid"):
    """entries: (frame, kind, model, variant, text)"""
    bank = KnowledgeBank(video_id)
    for frame, kind, model, variant, text in entries:
        bank.insert(Description(video_id, frame, kind, model, variant, text))
    return bank


def audio_bank(n_frames, n_variants, model="pengi", text=None):
    return bank_with(
        [
            (f, AgentKind.AUDIO_DESCRIBER, model, k, text or f"sound {f}-{k}")
            for f in range(n_frames)
            for k in range(n_variants)
        ]
    )


class TestMediaPrompt:
    def test_audio_catalog(self):
        assert media_prompt(AgentKind.AUDIO_DESCRIBER, 0) == "This is a sound of"
        assert media_prompt(AgentKind.AUDIO_DESCRIBER, 1) == "Generate metadata"
        assert media_prompt(AgentKind.AUDIO_DESCRIBER, 2) == "Generate audio caption"
        assert (
            media_prompt(AgentKind.AUDIO_DESCRIBER, 3)
            == "Please describe the audio in detail"
        )

    def test_visual_catalog(self):
        assert (
            media_prompt(AgentKind.VISUAL_DESCRIBER, 0)
            == "Please describe the image in detail"
        )

    def test_out_of_range(self):
        with pytest.raises(UnknownVariantError):
            media_prompt(AgentKind.AUDIO_DESCRIBER, 7)
        with pytest.raises(UnknownVariantError):
            media_prompt(AgentKind.TRANSLATOR, 0)


class TestSystemPromptGoldens:
    @pytest.mark.parametrize("mode", list(TranslatorMode))
    def test_byte_equals_fixture(self, mode):
        from openavs.prompting import _FIXTURE_FILES

        raw = (
            resources.files("openavs.prompts").joinpath(_FIXTURE_FILES[mode]).read_bytes()
        )
        assert translator_system_prompt(mode).encode("utf-8") + b"\n" == raw

    def test_basic_anchors(self):
        text = translator_system_prompt(TranslatorMode.BASIC)
        assert text.startswith("You are participating in a competitive game")
        assert "<answer> and </answer> tag pair" in text
        assert "Analyze the outputs" not in text
        assert "relationships among frames" not in text

    def test_prompt_consistency_line(self):
        text = translator_system_prompt(TranslatorMode.PROMPT_CONSISTENCY)
        assert "- Analyze the outputs from all audio AIs in each frame together." in text

    def test_frame_consistency_line(self):
        text = translator_system_prompt(TranslatorMode.FRAME_CONSISTENCY)
        assert "- Consider the relationships among frames." in text

    def test_prompt_and_frame_order(self):
        text = translator_system_prompt(TranslatorMode.PROMPT_AND_FRAME)
        prompt_pos = text.index("Analyze the outputs from all audio AIs")
        frame_pos = text.index("Consider the relationships among frames")
        task_pos = text.index("Identify and output only the object(s)")
        assert prompt_pos < frame_pos < task_pos
        basic = translator_system_prompt(TranslatorMode.BASIC)
        assert text.split("Your task:")[0] == basic.split("Your task:")[0]

    def test_model_consistency_anchors(self):
        text = translator_system_prompt(TranslatorMode.MODEL_CONSISTENCY)
        assert "output the final decision on a single line only" in text
        assert "`<answer>` and `</answer>` tags" in text

    def test_lf_only(self):
        for mode in TranslatorMode:
            assert "\r" not in translator_system_prompt(mode)


class TestSelectMode:
    @pytest.mark.parametrize(
        "prompt,frame,expected",
        [
            (False, False, TranslatorMode.BASIC),
            (True, False, TranslatorMode.PROMPT_CONSISTENCY),
            (False, True, TranslatorMode.FRAME_CONSISTENCY),
            (True, True, TranslatorMode.PROMPT_AND_FRAME),
        ],
    )
    def test_flag_mapping(self, prompt, frame, expected):
        cfg = PipelineConfig(
            variant=Variant.LITE,
            enable_prompt_consistency=prompt,
            enable_frame_consistency=frame,
            enable_model_consistency=False,
        )
        assert select_mode(cfg) is expected

    def test_model_consistency_dominates(self):
        cfg = PipelineConfig(variant=Variant.STANDARD, enable_model_consistency=True)
        assert select_mode(cfg) is TranslatorMode.MODEL_CONSISTENCY


class TestFrameTaggedInput:
    def test_single_frame_single_variant(self):
        bank = bank_with([(0, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "engine")])
        assert frame_tagged_user_input(bank, use_exp_tags=False) == "<frame0>\n engine\n</frame0>"

    def test_exp_tags_in_variant_order(self):
        bank = audio_bank(1, 3)
        text = frame_tagged_user_input(bank, use_exp_tags=True)
        assert text == (
            "<frame0>\n"
            " <exp1>sound 0-0</exp1>\n"
            " <exp2>sound 0-1</exp2>\n"
            " <exp3>sound 0-2</exp3>\n"
            "</frame0>"
        )

    def test_blocks_separated_by_single_newline(self):
        bank = audio_bank(3, 1)
        text = frame_tagged_user_input(bank, use_exp_tags=False)
        assert "</frame0>\n<frame1>" in text
        assert "\n\n" not in text

    def test_no_trailing_whitespace(self):
        bank = audio_bank(2, 2)
        for line in frame_tagged_user_input(bank, use_exp_tags=True).splitlines():
            assert line == line.rstrip()

    def test_missing_middle_frame(self):
        bank = bank_with(
            [
                (0, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "a"),
                (2, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "c"),
            ]
        )
        with pytest.raises(MissingFrameError):
            frame_tagged_user_input(bank, use_exp_tags=False)

    def test_missing_tail_frame_with_explicit_count(self):
        bank = audio_bank(2, 1)
        with pytest.raises(MissingFrameError):
            frame_tagged_user_input(bank, use_exp_tags=False, n_frames=3)

    def test_exp_numbering_spans_models(self):
        # two models x two variants -> exp1..exp4 ordered by (model, variant)
        entries = [
            (0, AgentKind.AUDIO_DESCRIBER, m, k, f"{m}-{k}")
            for m in ("alpha", "beta")
            for k in (0, 1)
        ]
        text = frame_tagged_user_input(bank_with(entries), use_exp_tags=True)
        assert (
            "<exp1>alpha-0</exp1>" in text
            and "<exp2>alpha-1</exp2>" in text
            and "<exp3>beta-0</exp3>" in text
            and "<exp4>beta-1</exp4>" in text
        )

    def test_tag_literal_sanitized(self):
        bank = bank_with([(0, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "fake <answer> here")])
        text = frame_tagged_user_input(bank, use_exp_tags=False)
        assert "<answer>" not in text
        assert "‹answer>" in text

    def test_multiline_description_folded_to_one_line(self):
        bank = bank_with([(0, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "a drum\nand a bell")])
        text = frame_tagged_user_input(bank, use_exp_tags=False)
        assert text == "<frame0>\n a drum and a bell\n</frame0>"


class TestModelConsistencyInput:
    def test_one_visual_three_audio(self):
        entries = [(2, AgentKind.VISUAL_DESCRIBER, "vlm", 0, "a parrot on a shoulder")]
        entries += [
            (2, AgentKind.AUDIO_DESCRIBER, "pengi", k, f"audio {k}") for k in range(3)
        ]
        text = model_consistency_user_input(bank_with(entries), 2)
        lines = text.split("\n")
        assert lines[0] == "Image agent 0: a parrot on a shoulder"
        assert lines[1] == ""
        assert lines[2] == "Audio agent 0: audio 0"
        assert lines[4] == "Audio agent 2: audio 2"

    def test_audio_only_is_missing_modality(self):
        bank = audio_bank(1, 1)
        with pytest.raises(MissingModalityError):
            model_consistency_user_input(bank, 0)

    def test_two_audio_models_ordered_by_model_id(self):
        entries = [
            (0, AgentKind.VISUAL_DESCRIBER, "vlm", 0, "scene"),
            (0, AgentKind.AUDIO_DESCRIBER, "zeta", 0, "from zeta"),
            (0, AgentKind.AUDIO_DESCRIBER, "alpha", 0, "from alpha"),
        ]
        text = model_consistency_user_input(bank_with(entries), 0)
        assert "Audio agent 0: from alpha" in text
        assert "Audio agent 1: from zeta" in text

    def test_no_frame_tags_present(self):
        entries = [
            (0, AgentKind.VISUAL_DESCRIBER, "vlm", 0, "scene"),
            (0, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "hum"),
        ]
        assert "<frame" not in model_consistency_user_input(bank_with(entries), 0)


class TestAssembledRequests:
    def test_clip_request_covers_all_frames(self):
        request = assemble_clip_request(audio_bank(4, 3), TranslatorMode.PROMPT_AND_FRAME)
        assert request.covered_frames == (0, 1, 2, 3)
        assert request.system_prompt == translator_system_prompt(TranslatorMode.PROMPT_AND_FRAME)

    def test_basic_mode_omits_exp_tags(self):
        request = assemble_clip_request(audio_bank(2, 3), TranslatorMode.FRAME_CONSISTENCY)
        assert "<exp" not in request.user_input

    def test_frame_request_single_coverage(self):
        entries = [
            (1, AgentKind.VISUAL_DESCRIBER, "vlm", 0, "scene"),
            (1, AgentKind.AUDIO_DESCRIBER, "pengi", 0, "hum"),
        ]
        request = assemble_frame_request(bank_with(entries), 1)
        assert request.covered_frames == (1,)
        assert request.mode is TranslatorMode.MODEL_CONSISTENCY

    def test_determinism(self):
        bank = audio_bank(3, 3)
        a = assemble_clip_request(bank, TranslatorMode.PROMPT_CONSISTENCY)
        b = assemble_clip_request(bank, TranslatorMode.PROMPT_CONSISTENCY)
        assert a == b


def reference_replicate(spans, n_frames):
    """Independent statement of the pad/truncate rule used by the parser."""
    taken = spans[:n_frames]
    while len(taken) < n_frames:
        taken.append(spans[-1] if len(spans) < n_frames else taken[-1])
    return taken


class TestParseFrameAnswers:
    def test_single_answer(self):
        directives, warnings = parse_frame_answers("<answer>drum</answer>", 1)
        assert directives[0].phrases == ("drum",)
        assert not warnings

    def test_silence_sentinel(self):
        directives, _ = parse_frame_answers("reasoning first\n<answer>none</answer>", 1)
        assert directives[0].silent

    @pytest.mark.parametrize("word", ["None.", "SILENCE", " no sound ", "n/a", "Nothing."])
    def test_sentinel_normalization(self, word):
        directives, _ = parse_frame_answers(f"<answer>{word}</answer>", 1)
        assert directives[0].silent

    def test_comma_split_and_trim(self):
        directives, _ = parse_frame_answers("<answer>a woman , a man</answer>", 1)
        assert directives[0].phrases == ("a woman", "a man")

    def test_semicolons_and_and_not_split(self):
        directives, _ = parse_frame_answers("<answer>a cat and a dog; barking</answer>", 1)
        assert directives[0].phrases == ("a cat and a dog; barking",)

    def test_underflow_replicates_last(self):
        reply = "<answer>a woman, a man</answer><answer>a woman</answer>"
        directives, warnings = parse_frame_answers(reply, 3)
        expected = reference_replicate([("a woman", "a man"), ("a woman",)], 3)
        assert [d.phrases for d in directives] == [tuple(e) for e in expected]
        assert [d.frame_index for d in directives] == [0, 1, 2]
        assert warnings and "replicated" in warnings[0]

    def test_overflow_discards_extras(self):
        reply = "".join(f"<answer>p{i}</answer>" for i in range(4))
        directives, warnings = parse_frame_answers(reply, 2)
        assert [d.phrases for d in directives] == [("p0",), ("p1",)]
        assert warnings and "discarded" in warnings[0]

    def test_no_tags_raises(self):
        with pytest.raises(NoAnswerTagsError):
            parse_frame_answers("drum", 1)

    def test_newline_inside_span_collapsed(self):
        directives, _ = parse_frame_answers("<answer>a big\ndrum</answer>", 1)
        assert directives[0].phrases == ("a big drum",)

    def test_comma_only_span_is_silent(self):
        directives, _ = parse_frame_answers("<answer> , ,</answer>", 1)
        assert directives[0].silent

    @given(
        st.lists(
            st.sampled_from(["drum", "a woman, a man", "none", "engine", ""]),
            max_size=10,
        ),
        st.sampled_from([1, 5, 10]),
        st.text(alphabet="abc <>/answer\n", max_size=20),
    )
    @settings(max_examples=150, deadline=None)
    def test_totality(self, spans, n_frames, junk):
        reply = junk + "".join(f"<answer>{s}</answer>{junk}" for s in spans)
        try:
            directives, _ = parse_frame_answers(reply, n_frames)
        except NoAnswerTagsError:
            # junk may itself contain a stray well-formed pair; absence is the only failure
            assert "<answer>" not in reply or "</answer>" not in reply or not _has_pair(reply)
            return
        assert len(directives) == n_frames
        for d in directives:
            assert d.silent == (len(d.phrases) == 0)


def _has_pair(reply):
    import re

    return re.search(r"<answer>.*?</answer>", reply, re.DOTALL) is not None


class TestParseFinalAnswer:
    def test_single_tag(self):
        d = parse_final_answer("…supports lawnmower\n<answer>lawnmower</answer>")
        assert d.phrases == ("lawnmower",)

    def test_last_span_wins(self):
        # reference scan: the final well-formed span in document order
        reply = "<answer>drum</answer> reasoning continues <answer>guitar</answer>"
        assert parse_final_answer(reply).phrases == ("guitar",)

    def test_missing_tags(self):
        with pytest.raises(NoAnswerTagsError):
            parse_final_answer("Guitar.")


printable_text = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=126, exclude_characters="<>"),
    min_size=1,
    max_size=40,
).map(str.strip).filter(bool)


class TestRoundTrip:
    @given(
        st.integers(1, 5),
        st.integers(1, 3),
        st.data(),
    )
    @settings(max_examples=120, deadline=None)
    def test_assembly_parses_back_to_inputs(self, n_frames, n_variants, data):
        texts = {
            (f, k): data.draw(printable_text, label=f"text{f}.{k}")
            for f in range(n_frames)
            for k in range(n_variants)
        }
        bank = bank_with(
            [
                (f, AgentKind.AUDIO_DESCRIBER, "pengi", k, texts[(f, k)])
                for f in range(n_frames)
                for k in range(n_variants)
            ]
        )
        use_exp = n_variants > 1
        recovered = extract_frame_texts(frame_tagged_user_input(bank, use_exp))
        assert set(recovered) == set(range(n_frames))
        for f in range(n_frames):
            expected = [texts[(f, k)] for k in range(n_variants)] if use_exp else [texts[(f, 0)]]
            assert recovered[f] == expected
