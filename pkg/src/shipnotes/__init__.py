"""Sequential, hierarchical, pretrained recurrent models over clinical-style notes.

Modules, bottom up: ``compute`` (numpy reverse-mode autodiff), ``records``
(schema, cohort split, task examples), ``bagging`` (timestep bags),
``notes_encoder`` (word LSTM and attention), ``record_model`` (variants and
heads), ``pretrain`` (language-model objective), ``train`` (Adam loop),
``evaluate`` (metrics, Welch test), ``attribution`` (integrated gradients),
``experiments`` and ``cli``.
"""

__version__ = "0.1.0"
