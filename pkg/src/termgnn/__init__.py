"""termgnn: graph neural networks for program termination estimation.

Pipeline: parse MiniImp programs (`lang`), label them by fuzzing under
a step budget (`interp`), generate balanced datasets (`datagen`),
encode ASTs as one-hot feature graphs (`graphenc`), train GCN/GAT
classifiers and segmenters plus recurrent baselines (`gnnmodels`,
`training`) on a from-scratch autodiff engine (`autodiff`), score them
(`metrics`), and debug nontermination via slicing and witness search
(`slicer`).  The `cli` module ties it together.
"""

__version__ = "0.1.0"
