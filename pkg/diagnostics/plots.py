"""Energy plots written as standalone HTML."""
import logging
import os
from typing import Dict

import pandas as pd
import plotly.graph_objs as go

logger = logging.getLogger(__name__)


def energy_figure(series: Dict[str, pd.DataFrame], title: str = 'Evolution of the energy') -> go.Figure:
    """One line per run; each frame needs columns t and e_total."""
    fig = go.Figure()
    for name, frame in series.items():
        fig.add_trace(go.Scatter(x=frame['t'], y=frame['e_total'], mode='lines', name=name))
    fig.update_layout(title=title, xaxis_title='t', yaxis_title='energy', template='plotly_white')
    return fig


def write_energy_plot(series: Dict[str, pd.DataFrame], path: str) -> str:
    fig = energy_figure(series)
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fig.write_html(path, include_plotlyjs='cdn')
    logger.info(f"Wrote energy plot to {path}")
    return path
