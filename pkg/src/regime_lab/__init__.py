"""regime_lab: switching residual networks for long-short equity selection.

Core pieces: from-scratch dense-network numerics with verified gradients
(`nncore`, `blocks`, `training`, `gradcheck`), a price-panel feature/label
pipeline (`panel`, `features`), a synthetic two-regime market generator
(`marketsim`), a rolling-window backtest (`backtest`), and a realized
volatility prediction benchmark (`volpredict`). `cli` wires them together.
"""

__version__ = "0.1.0"
