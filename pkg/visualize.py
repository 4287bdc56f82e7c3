import typer

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def plot_loss(telemetry: pd.DataFrame, path: str, title: str = "Contrastive pre-training"):
    """
    Per-step loss with the per-epoch mean overlaid.
    """
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.arange(len(telemetry))
    ax.plot(steps, telemetry["loss"], color="lightgray", lw=1, label="step")
    per_epoch = telemetry.groupby("epoch")["loss"].mean()
    last_step = telemetry.groupby("epoch").cumcount().groupby(telemetry["epoch"]).max()
    ends = np.cumsum(last_step.values + 1) - 1
    ax.plot(ends, per_epoch.values, color="tab:blue", marker="o", ms=3, label="epoch mean")
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=200, bbox_inches="tight")
    plt.close(fig)


def plot_finetune(history: pd.DataFrame, path: str):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(history["epoch"], history["train_loss"], label="Train Loss")
    ax.plot(history["epoch"], history["val_loss"], label="Val Loss")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss per report")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=200, bbox_inches="tight")
    plt.close(fig)


def main(telemetry: str, out: str = None):
    df = pd.read_csv(telemetry)
    if df.empty:
        print(f"No data in {telemetry}!")
        return
    out = out or telemetry.rsplit(".", 1)[0] + ".pdf"
    if "train_loss" in df.columns:
        plot_finetune(df, out)
    else:
        plot_loss(df, out)
    print(f"[visualize] {out}")


if __name__ == "__main__":
    typer.run(main)
