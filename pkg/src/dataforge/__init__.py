"""Multimodal causal-LM data engine.

Quantizes speech and image payloads into discrete codes, assembles them
with text into unified token sequences, packs them into attention-masked
training batches under staged mixing ratios, and validates or constrains
generated streams against the modality grammar.
"""

from .errors import DataForgeError
from .grammar import DecodeConfig, GrammarState, GrammarViolation, allowed_next, decode_config, step
from .manifest import EntryKind, FilterConfig, ManifestEntry, filter_entry, load_manifest
from .mixing import MixScheduler, MixSpec, SourceType, Stage, plan
from .packing import PackedBatch, PretrainAll, SftAssistantOnly, attention_allowed, build_loss_mask, pack
from .rvq import RvqCodebooks, SpeechCodes, waveform_frames
from .sample import Sample, Segment
from .speech import SpeechMode, parse_speech, serialize_speech, speech_token_count
from .templates import (
    Conversation,
    Direction,
    PairKind,
    PairedRecord,
    Role,
    Turn,
    render_pretrain,
    render_sft,
)
from .visual import (
    FramePolicy,
    GridQuantizer,
    ImageTokens,
    detect_scenes,
    parse_image,
    quantize_image,
    select_frames,
    serialize_image,
)
from .vocab import ByteTextCodec, TokenClass, TokenKind, VocabLayout, build_layout, default_layout

__version__ = "0.1.0"

__all__ = [
    "ByteTextCodec",
    "Conversation",
    "DataForgeError",
    "DecodeConfig",
    "Direction",
    "EntryKind",
    "FilterConfig",
    "FramePolicy",
    "GrammarState",
    "GrammarViolation",
    "GridQuantizer",
    "ImageTokens",
    "ManifestEntry",
    "MixScheduler",
    "MixSpec",
    "PackedBatch",
    "PairKind",
    "PairedRecord",
    "PretrainAll",
    "Role",
    "RvqCodebooks",
    "Sample",
    "Segment",
    "SftAssistantOnly",
    "SourceType",
    "SpeechCodes",
    "SpeechMode",
    "Stage",
    "TokenClass",
    "TokenKind",
    "Turn",
    "VocabLayout",
    "allowed_next",
    "attention_allowed",
    "build_layout",
    "build_loss_mask",
    "decode_config",
    "default_layout",
    "detect_scenes",
    "filter_entry",
    "load_manifest",
    "pack",
    "parse_image",
    "parse_speech",
    "plan",
    "quantize_image",
    "render_pretrain",
    "render_sft",
    "select_frames",
    "serialize_image",
    "serialize_speech",
    "speech_token_count",
    "step",
    "waveform_frames",
]
