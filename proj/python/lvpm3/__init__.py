"""Multilingual multimodal translation with language-aware visual prompts."""

from lvpm3._core import (
    ConfigError,
    DegenerateBatchError,
    Error,
    FormatError,
    LanguageError,
    NumericError,
    ShapeError,
    Tokenizer,
    Translator,
    VariantError,
    VocabularyError,
    bleu,
    gradcheck,
    lr_schedule,
    make_toy_corpus,
    pseudo_visual_tokens,
    read_vtok,
    train,
    train_bpe,
    write_vtok,
)

__all__ = [
    "ConfigError",
    "DegenerateBatchError",
    "Error",
    "FormatError",
    "LanguageError",
    "NumericError",
    "ShapeError",
    "Tokenizer",
    "Translator",
    "VariantError",
    "VocabularyError",
    "bleu",
    "gradcheck",
    "lr_schedule",
    "make_toy_corpus",
    "pseudo_visual_tokens",
    "read_vtok",
    "train",
    "train_bpe",
    "write_vtok",
]
