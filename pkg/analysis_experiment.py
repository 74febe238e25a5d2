import matplotlib.pyplot as plt
import os
import pandas as pd
import seaborn as sns


results_dir = "results/experiment"


def main():
    plot_feature_types()
    plot_classifiers()
    plot_confusion_grid()


def load_means(subdir):
    results_df = pd.DataFrame()

    # Load data
    for task in ["speech", "song"]:
        file_path = os.path.join(results_dir, subdir, f"results_{task}.csv")
        if os.path.exists(file_path):
            df = pd.read_csv(file_path, dtype={"fold": str})
            results_df = pd.concat([results_df, df], ignore_index=True)

    if results_df.empty:
        print(f"No data found in {os.path.join(results_dir, subdir)}. Run batch_run_experiment.py first.")
        return results_df

    return results_df[results_df["fold"] == "mean"]


def plot_feature_types():
    means = load_means("features")
    if means.empty:
        return

    means = means.assign(features=means["feature_set"] + " " + means["feature_type"])

    fig, axes = plt.subplots(1, 2, figsize=(16, 6), sharey=True)
    for ax, metric in zip(axes, ["accuracy", "uar"]):
        sns.barplot(data=means, x="features", y=metric, hue="task", ax=ax)
        ax.set_xlabel("Feature set")
        ax.set_ylabel(metric.upper() if metric == "uar" else "Accuracy")
        ax.set_title(f"LLD vs HSF ({metric})")
        ax.grid(True, axis="y", linestyle="--", linewidth=0.7)
        ax.set_ylim(0, 1)

    fig.tight_layout()
    fig.savefig(os.path.join(results_dir, "Feature sets and types.png"))
    plt.close(fig)


def plot_classifiers():
    means = load_means("classifiers")
    if means.empty:
        return

    fig, axes = plt.subplots(1, 2, figsize=(12, 6), sharey=True)
    for ax, metric in zip(axes, ["accuracy", "uar"]):
        sns.barplot(data=means, x="classifier", y=metric, hue="task", ax=ax)
        ax.set_xlabel("Classifier")
        ax.set_ylabel(metric.upper() if metric == "uar" else "Accuracy")
        ax.set_title(f"Classifiers on L193 HSF ({metric})")
        ax.grid(True, axis="y", linestyle="--", linewidth=0.7)
        ax.set_ylim(0, 1)

    fig.tight_layout()
    fig.savefig(os.path.join(results_dir, "Classifiers.png"))
    plt.close(fig)


def plot_confusion_grid():
    fig, axes = plt.subplots(1, 2, figsize=(16, 7))

    for ax, task in zip(axes, ["speech", "song"]):
        file_path = os.path.join(results_dir, "classifiers", f"confusion_{task}_L193_HSF_LSTM.csv")
        if not os.path.exists(file_path):
            ax.set_axis_off()
            continue

        counts = pd.read_csv(file_path, index_col=0)
        shares = counts.div(counts.sum(axis=1).where(lambda s: s > 0, 1), axis=0)
        sns.heatmap(shares, annot=True, fmt=".2f", cmap="Blues", vmin=0, vmax=1, cbar=False, ax=ax)
        ax.set_xlabel("Predicted")
        ax.set_ylabel("True")
        ax.set_title(f"{task.capitalize()} (L193 HSF, LSTM)")

    fig.tight_layout()
    fig.savefig(os.path.join(results_dir, "Confusion matrices.png"))
    plt.close(fig)


if __name__ == "__main__":
    main()
