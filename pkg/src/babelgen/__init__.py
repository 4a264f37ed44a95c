"""babelgen: synthetic text corpora for low-resource languages.

Generates labeled training data with configurable LLM prompting strategies
(label summaries, demonstrations, judge-based revision), assembles balanced
corpora and evaluates them with similarity/diversity metrics and
downstream-performance reports.
"""

__version__ = "0.1.0"

from babelgen.corpus import Dataset, LabeledExample, LabelSpec

__all__ = ["Dataset", "LabeledExample", "LabelSpec", "__version__"]
