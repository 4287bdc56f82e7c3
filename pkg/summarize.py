import typer

import numpy as np
import pandas as pd
from scipy.stats import sem


def summarize_experiment(df: pd.DataFrame, value: str, by: list[str]) -> pd.DataFrame:
    """Per-condition mean and 1.96 x standard error across seeds."""
    if df.empty:
        return pd.DataFrame(columns=by + ["n", "mean", "ci95"])
    rows = []
    for key, subset in df.groupby(by, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        values = subset[value].dropna().to_numpy(dtype=float)
        ci = 1.96 * sem(values) if len(values) > 1 else np.nan
        rows.append(dict(zip(by, key), n=len(values), mean=float(np.mean(values)) if len(values) else np.nan, ci95=ci))
    return pd.DataFrame(rows, columns=by + ["n", "mean", "ci95"])


def main(csv_path: str = "results/limited_labels.csv", value: str = "weighted_f1", by: str = "encoder,mode"):
    df = pd.read_csv(csv_path)
    if df.empty:
        print(f"No data in {csv_path}!")
        return
    summary = summarize_experiment(df, value, [c.strip() for c in by.split(",")])
    for _, row in summary.iterrows():
        condition = ", ".join(f"{c} = {row[c]}" for c in summary.columns[:-3])
        print(f"{condition}: {value} = {row['mean']:.3f} +/- {row['ci95']:.3f} (n={row['n']})")


if __name__ == "__main__":
    typer.run(main)
