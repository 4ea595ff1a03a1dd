import plotly.graph_objects as go

from src.utils import atomic_write_text

RUN_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _color(index):
    return RUN_COLORS[index % len(RUN_COLORS)]


def create_convergence_chart(histories, column="rel_error", title=None, log_y=False):
    """One line per run of ``column`` against the iteration counter"""
    fig = go.Figure()
    for index, (name, df) in enumerate(histories.items()):
        if column not in df.columns or df[column].isna().all():
            continue
        fig.add_trace(go.Scatter(
            x=df["k"],
            y=df[column],
            mode="lines+markers",
            name=name,
            line=dict(color=_color(index), width=2)
        ))
    if not fig.data:
        fig.add_annotation(text=f"No {column} data available", xref="paper", yref="paper",
                           x=0.5, y=0.5, showarrow=False)
    fig.update_layout(
        title=title or column.replace("_", " ").title(),
        xaxis_title="Iteration",
        yaxis_title=column,
        yaxis_type="log" if log_y else "linear",
        height=400
    )
    return fig


def create_residual_chart(histories):
    """Primal (solid) and dual (dotted) ADMM residuals on a log axis"""
    fig = go.Figure()
    for index, (name, df) in enumerate(histories.items()):
        if "r_norm" not in df.columns:
            continue
        fig.add_trace(go.Scatter(x=df["k"], y=df["r_norm"], mode="lines+markers", name=f"{name} |r|",
                                 line=dict(color=_color(index), width=2)))
        fig.add_trace(go.Scatter(x=df["k"], y=df["s_norm"], mode="lines+markers", name=f"{name} |s|",
                                 line=dict(color=_color(index), width=2, dash="dot")))
    fig.update_layout(title="ADMM residuals", xaxis_title="Global iteration", yaxis_title="Norm",
                      yaxis_type="log", height=400)
    return fig


def create_solve_count_chart(summary):
    """Stacked forward / adjoint / incremental solve counts per run"""
    fig = go.Figure()
    if summary is None or summary.empty:
        return fig
    for column, color in (("forward_solves", "#1f77b4"), ("adjoint_solves", "#2ca02c"),
                          ("incremental_solves", "#d62728")):
        fig.add_trace(go.Bar(x=summary["name"], y=summary[column], name=column.replace("_", " "),
                             marker_color=color))
    fig.update_layout(title="PDE solves per run", barmode="stack", yaxis_title="Solves", height=400)
    return fig


def write_convergence_html(histories, path, title="Convergence", summary=None):
    """Write every chart into one HTML page; plotly.js is loaded from its CDN"""
    figures = [create_convergence_chart(histories, "rel_error", "Relative error"),
               create_convergence_chart(histories, "cost", "Objective", log_y=True)]
    if any("r_norm" in df.columns for df in histories.values()):
        figures.append(create_residual_chart(histories))
    if any("grad_norm" in df.columns for df in histories.values()):
        figures.append(create_convergence_chart(histories, "grad_norm", "Gradient norm", log_y=True))
    if summary is not None:
        figures.append(create_solve_count_chart(summary))

    parts = [fig.to_html(full_html=False, include_plotlyjs="cdn" if index == 0 else False,
                         div_id=f"chart-{index}")
             for index, fig in enumerate(figures)]
    page = (f"<html><head><meta charset=\"utf-8\"><title>{title}</title></head><body>\n"
            f"<h1>{title}</h1>\n" + "\n".join(parts) + "\n</body></html>\n")
    return atomic_write_text(path, page)
