"""Exception hierarchy shared by every sectree module."""


class SectreeError(Exception):
    """Base class for all sectree errors."""


class ConfigError(SectreeError):
    pass


# ingestion
class NoItemsFound(SectreeError):
    pass


class DuplicateItem(SectreeError):
    pass


class UnknownTokenizer(SectreeError):
    pass


class EmptyCorpus(SectreeError):
    pass


# providers
class ProviderUnavailable(SectreeError):
    pass


class DimensionMismatch(SectreeError):
    pass


class SpaceMismatch(SectreeError):
    """Raised when vectors from different embedding spaces are compared."""


# lexicon weighting
class EmptyLexicon(SectreeError):
    pass


class InvalidBudget(SectreeError):
    pass


# trees and persistence
class EmptyItem(SectreeError):
    pass


class EmptyTree(SectreeError):
    pass


class VersionMismatch(SectreeError):
    pass


class ChecksumMismatch(SectreeError):
    pass


class IndexMissing(SectreeError):
    pass


# evaluation
class FilingMismatch(SectreeError):
    pass
