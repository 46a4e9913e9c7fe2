"""Prompt templates for paired pretraining data and SFT conversations.

Paired records render through fixed template strings with one modality
slot and one text slot; chat conversations render through abstract role
markers with supervision confined to assistant turns. Understanding
directions serialize speech content-only; generation directions emit
all four codebooks in the sequential pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum

from .errors import InvalidInput
from .mixing import Stage
from .packing import SftAssistantOnly
from .rvq import SpeechCodes
from .sample import Sample, SampleBuilder
from .speech import SpeechMode, serialize_speech
from .visual import ImageTokens, serialize_image
from .vocab import (
    ASSISTANT_MARKER,
    END_TURN_MARKER,
    SYSTEM_MARKER,
    USER_MARKER,
    ByteTextCodec,
    VocabLayout,
)

# Pretraining templates for paired data. Literal text is exact; the slot
# names in braces are substituted at render time.
TEMPLATE_IMAGE_TO_TEXT = "{image} The caption of this image is: {caption}"
TEMPLATE_TEXT_TO_IMAGE = 'Please generate an image of "{caption}": {image}'
TEMPLATE_VIDEO_TO_TEXT = "Please describe the following video: {video} {description}"
TEMPLATE_TEXT_TO_VIDEO = 'Please generate a video for "{description}": {video}'
TEMPLATE_ASR = "{speech} Transcribe this speech: {transcription}"
TEMPLATE_ASR_STAGE3 = "{speech} The transcription of this speech is: {transcription}"
TEMPLATE_TTS = 'Please generate a speech of "{transcription}": {speech}'

# Default SFT system prompts; the speech-only variant pins the output
# modality for speech-generation tasks.
SYSTEM_PROMPT_GENERAL = (
    "You are MIO, an AI assistant capable of understanding and generating images, "
    "text, videos, and speech, selecting the appropriate modality according to the context."
)
SYSTEM_PROMPT_SPEECH_ONLY = (
    "You are MIO, an AI assistant capable of understanding images, text, videos, and "
    "speech, and generating speech. Please respond to the user with speech only, "
    "starting with <spch> and ending with </spch>."
)

# Fraction of video-text pairs rendered text-to-video when the record does
# not fix a direction; the rest render video-to-text.
VIDEO_TEXT_TO_VIDEO_FRACTION = 0.6


@dataclass(frozen=True)
class TemplateSet:
    """The paired-data templates in force for one run.

    Defaults are the training-time strings above; evaluation-time prompt
    variants can be swapped in from a config file. Each template must
    keep its modality slot; the text slot may be omitted.
    """

    image_to_text: str = TEMPLATE_IMAGE_TO_TEXT
    text_to_image: str = TEMPLATE_TEXT_TO_IMAGE
    video_to_text: str = TEMPLATE_VIDEO_TO_TEXT
    text_to_video: str = TEMPLATE_TEXT_TO_VIDEO
    asr: str = TEMPLATE_ASR
    asr_stage3: str = TEMPLATE_ASR_STAGE3
    tts: str = TEMPLATE_TTS

    @classmethod
    def from_dict(cls, doc: dict) -> "TemplateSet":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidInput(f"unknown template names: {sorted(unknown)}")
        return cls(**doc)


class PairKind(Enum):
    IMAGE_CAPTION = "image_caption"
    VIDEO_DESCRIPTION = "video_description"
    SPEECH_TRANSCRIPT = "speech_transcript"


class Direction(Enum):
    TO_TEXT = "to_text"
    TO_MODALITY = "to_modality"


@dataclass
class PairedRecord:
    """One paired sample: a modality payload, its text, and a direction."""

    kind: PairKind
    direction: Direction
    text: str
    image: ImageTokens | None = None
    frames: tuple[ImageTokens, ...] = ()
    speech: SpeechCodes | None = None

    def __post_init__(self):
        if self.kind is PairKind.IMAGE_CAPTION and self.image is None:
            raise InvalidInput("image-caption record needs an image payload")
        if self.kind is PairKind.VIDEO_DESCRIPTION and not self.frames:
            raise InvalidInput("video record needs at least one frame")
        if self.kind is PairKind.SPEECH_TRANSCRIPT and self.speech is None:
            raise InvalidInput("speech record needs a speech payload")


def _pretrain_template(
    record: PairedRecord, stage: Stage, templates: TemplateSet
) -> tuple[str, str, str]:
    """(template, modality slot, text slot) for one record."""
    if record.kind is PairKind.IMAGE_CAPTION:
        if record.direction is Direction.TO_TEXT:
            return templates.image_to_text, "image", "caption"
        return templates.text_to_image, "image", "caption"
    if record.kind is PairKind.VIDEO_DESCRIPTION:
        if record.direction is Direction.TO_TEXT:
            return templates.video_to_text, "video", "description"
        return templates.text_to_video, "video", "description"
    if record.direction is Direction.TO_TEXT:
        template = templates.asr_stage3 if stage is Stage.III else templates.asr
        return template, "speech", "transcription"
    return templates.tts, "speech", "transcription"


def _add_payload(builder: SampleBuilder, record: PairedRecord, layout: VocabLayout) -> None:
    if record.kind is PairKind.IMAGE_CAPTION:
        builder.add("image", serialize_image(record.image, layout))
    elif record.kind is PairKind.VIDEO_DESCRIPTION:
        for frame in record.frames:
            builder.add("image", serialize_image(frame, layout))
    else:
        mode = (
            SpeechMode.CONTENT_ONLY
            if record.direction is Direction.TO_TEXT
            else SpeechMode.FULL_SEQUENTIAL
        )
        builder.add("speech", serialize_speech(record.speech, mode, layout))


def render_pretrain(
    record: PairedRecord,
    stage: Stage,
    layout: VocabLayout,
    codec: ByteTextCodec,
    templates: TemplateSet | None = None,
) -> Sample:
    """Render one paired record into a Sample via its stage's template."""
    template, slot, text_slot = _pretrain_template(record, stage, templates or TemplateSet())
    parts = template.split("{%s}" % slot)
    if len(parts) != 2:
        raise InvalidInput(f"template must contain {{{slot}}} exactly once: {template!r}")
    before, after = parts
    builder = SampleBuilder()
    before = before.replace("{%s}" % text_slot, record.text)
    after = after.replace("{%s}" % text_slot, record.text)
    if before:
        builder.add("text", codec.encode(before))
    _add_payload(builder, record, layout)
    if after:
        builder.add("text", codec.encode(after))
    return builder.build()


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    tokens: ImageTokens


@dataclass(frozen=True)
class VideoPart:
    frames: tuple[ImageTokens, ...]


@dataclass(frozen=True)
class SpeechPart:
    codes: SpeechCodes


Part = TextPart | ImagePart | VideoPart | SpeechPart


class Role(Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass
class Turn:
    role: Role
    parts: list[Part]


@dataclass
class Conversation:
    """Alternating user/assistant turns; training requires ending on assistant."""

    turns: list[Turn]
    system: str | None = None


def _speech_only_output(conv: Conversation) -> bool:
    assistant = [t for t in conv.turns if t.role is Role.ASSISTANT]
    return all(
        turn.parts and all(isinstance(p, SpeechPart) for p in turn.parts) for turn in assistant
    )


def _render_parts(builder: SampleBuilder, parts, layout, codec, generating: bool) -> None:
    for part in parts:
        if isinstance(part, TextPart):
            builder.add("text", codec.encode(part.text))
        elif isinstance(part, ImagePart):
            builder.add("image", serialize_image(part.tokens, layout))
        elif isinstance(part, VideoPart):
            for frame in part.frames:
                builder.add("image", serialize_image(frame, layout))
        elif isinstance(part, SpeechPart):
            mode = SpeechMode.FULL_SEQUENTIAL if generating else SpeechMode.CONTENT_ONLY
            builder.add("speech", serialize_speech(part.codes, mode, layout))
        else:
            raise InvalidInput(f"unknown part type {type(part).__name__}")


def render_sft(
    conv: Conversation,
    layout: VocabLayout,
    codec: ByteTextCodec,
) -> tuple[Sample, SftAssistantOnly]:
    """Render a conversation; supervision covers exactly the assistant turns.

    Each supervised span runs from the first token after the assistant
    role marker through that turn's end-of-turn marker (the model must
    learn to terminate its own responses).
    """
    if not conv.turns:
        raise InvalidInput("conversation has no turns")
    for i, turn in enumerate(conv.turns):
        expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
        if turn.role is not expected:
            raise InvalidInput(f"turn {i} must be {expected.value}")
    if conv.turns[-1].role is not Role.ASSISTANT:
        raise InvalidInput("training conversations must end with an assistant turn")

    system = conv.system
    if system is None:
        system = SYSTEM_PROMPT_SPEECH_ONLY if _speech_only_output(conv) else SYSTEM_PROMPT_GENERAL

    builder = SampleBuilder()
    builder.add("marker", [codec.marker_id(SYSTEM_MARKER)])
    builder.add("text", codec.encode(system))
    builder.add("marker", [codec.marker_id(END_TURN_MARKER)])
    for turn in conv.turns:
        if turn.role is Role.USER:
            builder.add("marker", [codec.marker_id(USER_MARKER)])
            _render_parts(builder, turn.parts, layout, codec, generating=False)
            builder.add("marker", [codec.marker_id(END_TURN_MARKER)])
        else:
            builder.add("marker", [codec.marker_id(ASSISTANT_MARKER)])
            start = builder.position
            _render_parts(builder, turn.parts, layout, codec, generating=True)
            builder.add("marker", [codec.marker_id(END_TURN_MARKER)])
            builder.supervise(start, builder.position)
    sample = builder.build()
    return sample, SftAssistantOnly(spans=(tuple(sample.supervised_spans),))
