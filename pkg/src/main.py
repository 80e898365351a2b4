#!/usr/bin/env python3
"""
Storm Damage Nowcast 主入口
雷达风暴单体检测、追踪、特征构建、损害等级分类与评估流水线
"""
import argparse
import os
import sys
import time
from typing import Dict, List, Optional

# 添加项目根目录到 Python 路径
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src import forest, mlp  # noqa: E402
from src.cells import detect_frame, read_cells, write_cells  # noqa: E402
from src.config import (  # noqa: E402
    ConfigError, PipelineConfig, apply_overrides, get_damage_class_info, load_config_file,
)
from src.dataset import N_CLASSES, Dataset, read_dataset, write_dataset  # noqa: E402
from src.evaluation import (  # noqa: E402
    class_histogram, evaluate, read_confusion, read_metrics, split, write_confusion, write_metrics,
)
from src.experiments import run_comparison, write_comparison  # noqa: E402
from src.features import build_samples, read_observations, read_strikes, read_transformers  # noqa: E402
from src.grid_io import FRAME_SUFFIX, frame_filename, load_sequence  # noqa: E402
from src.report_generator import ModelSection, ReportGenerator, generate_report  # noqa: E402
from src.resample import smote_with_provenance, write_provenance  # noqa: E402
from src.store import Store  # noqa: E402
from src.synth import (  # noqa: E402
    ScenarioConfig, generate_dataset_direct, generate_scenario, load_scenario_config, write_scenario,
)
from src.tracking import TrackingSession, read_tracks, write_forecasts, write_tracks  # noqa: E402

SUBCOMMANDS = ("synth", "detect", "track", "featurize", "train", "evaluate", "predict", "report", "compare")
MODEL_FILES = {"rfc": "forest.scf", "mlp": "mlp.scmlp"}


def print_banner():
    """打印程序横幅"""
    banner = """
╔════════════════════════════════════════════════════════════╗
║                                                              ║
║   Storm Damage Nowcast - 风暴单体电网损害分级                ║
║                                                              ║
║   等值线检测 · DBSCAN 聚类 · 光流追踪                        ║
║   SMOTE · 随机森林 · MLP · 评估报告                          ║
║                                                              ║
╚════════════════════════════════════════════════════════════╝
"""
    print(banner)


def cells_name(timestamp: int) -> str:
    return f"{int(timestamp)}.cells"


# ============================================================================
# 各阶段
# ============================================================================

def stage_synth(config: PipelineConfig, store: Store, args) -> str:
    """生成合成场景"""
    scenario_config = load_scenario_config(args.scenario) if args.scenario else ScenarioConfig(seed=config.seed)
    scenario_config.step_seconds = config.step_seconds
    scenario_config.validate()

    print(f"[步骤 1/2] 生成场景 (seed={scenario_config.seed}, {scenario_config.n_frames} 帧)...")
    scenario = generate_scenario(scenario_config, config.threshold_dbz, config.area_limit, config.radius)
    print(f"   闪电 {len(scenario.strikes)} 次, 观测 {len(scenario.observations)} 条, "
          f"变压器 {len(scenario.transformers)} 个, 停电 {len(scenario.transformers.outages)} 次")
    print(f"   损害模型 c = {scenario.damage_c:.4f}")
    print()

    print("[步骤 2/2] 写出场景文件...")
    paths = write_scenario(scenario, scenario_config, store.store_dir / "synth", config.frames_dir)
    for name in ("strikes", "observations", "transformers", "scenario"):
        store.register("synth", paths[name].name)
    for grid in scenario.frames:
        path = paths["frames"] / frame_filename(grid.timestamp)
        store.register("frames", path.name, path)
    return f"synth: {len(scenario.frames)} 帧 -> {config.frames_dir}"


def stage_detect(config: PipelineConfig, store: Store, args) -> str:
    """逐帧检测风暴对象和单体"""
    sequence = load_sequence(config.frames_dir, config.step_seconds)
    print(f"[步骤 1/1] 检测 {len(sequence)} 帧 (阈值 {config.threshold_dbz} dBZ, "
          f"面积 {config.area_limit} km², 半径 {config.radius} km)...")
    n_objects = n_cells = 0
    for grid in sequence:
        objects, cells = detect_frame(grid, config.threshold_dbz, config.area_limit, config.radius)
        name = cells_name(grid.timestamp)
        write_cells(objects, cells, store.path_for("detect", name))
        store.register("detect", name)
        n_objects += len(objects)
        n_cells += len(cells)
    return f"detect: {len(sequence)} 帧, {n_objects} 个风暴对象, {n_cells} 个单体"


def stage_track(config: PipelineConfig, store: Store, args) -> str:
    """光流追踪与路径预报"""
    sequence = load_sequence(config.frames_dir, config.step_seconds)
    session = TrackingSession(config.alpha, config.iterations, config.max_match_km, config.step_seconds)
    print(f"[步骤 1/1] 追踪 {len(sequence)} 帧 (alpha={config.alpha}, iterations={config.iterations})...")
    n_forecasts = 0
    for grid in sequence:
        _, cells = read_cells(store.require("detect", cells_name(grid.timestamp)), grid)
        _, forecasts = session.update(grid, cells)
        name = f"forecasts_{grid.timestamp}.txt"
        write_forecasts(forecasts, store.path_for("track", name))
        store.register("track", name)
        n_forecasts += len(forecasts)

    tracks = session.all_tracks()
    write_tracks(tracks, store.path_for("track", "tracks.txt"))
    store.register("track", "tracks.txt")
    return f"track: {len(tracks)} 条轨迹, {n_forecasts} 条预报路径"


def stage_featurize(config: PipelineConfig, store: Store, args) -> str:
    """特征构建与标注"""
    sequence = load_sequence(config.frames_dir, config.step_seconds)
    strikes = read_strikes(store.require("synth", "strikes.txt"))
    observations = read_observations(store.require("synth", "observations.txt"))
    transformers = read_transformers(store.require("synth", "transformers.txt"))
    tracks = read_tracks(store.require("track", "tracks.txt"))

    by_cell = {}
    for track in tracks:
        for obs in track.observations:
            by_cell[(obs.timestamp, obs.cell_id)] = track

    print(f"[步骤 1/1] 构建特征 ({len(sequence)} 帧, 标注窗口 {config.label_window_s}s)...")
    samples = []
    for grid in sequence:
        _, cells = read_cells(store.require("detect", cells_name(grid.timestamp)), grid)
        frame_tracks = {c.cell_id: by_cell[(grid.timestamp, c.cell_id)].until(grid.timestamp)
                        for c in cells if (grid.timestamp, c.cell_id) in by_cell}
        samples.extend(build_samples(cells, frame_tracks, grid, strikes, observations, transformers,
                                     config.label_window_s))

    data = Dataset.from_samples(samples)
    write_dataset(data, store.path_for("featurize", "dataset.csv"))
    store.register("featurize", "dataset.csv")
    _print_histogram("样本", data.labels)
    complete = len(data.complete_indices())
    return f"featurize: {len(data)} 个样本 (完整 {complete} 个)"


def stage_train(config: PipelineConfig, store: Store, args) -> str:
    """划分数据集并训练模型"""
    data = read_dataset(store.require("featurize", "dataset.csv"))
    train, validation = split(data, config.train_frac, config.seed)
    write_dataset(train, store.path_for("train", "train.csv"))
    write_dataset(validation, store.path_for("train", "validation.csv"))
    store.register("train", "train.csv")
    store.register("train", "validation.csv")
    print(f"[步骤 1/3] 划分数据集: 训练 {len(train)}, 验证 {len(validation)}")

    fit_set = train
    if config.filter_complete:
        fit_set = fit_set.subset(fit_set.complete_indices())
        print(f"   仅保留完整样本: {len(fit_set)} 个")
        if len(fit_set) == 0:
            raise ValueError("没有完整样本可用于训练")
    if config.smote:
        fit_set, records = smote_with_provenance(fit_set, seed=config.seed)
        write_provenance(records, store.path_for("train", f"provenance_{config.model}.txt"))
        store.register("train", f"provenance_{config.model}.txt")
        print(f"   SMOTE: 生成 {len(records)} 个合成样本")
    _print_histogram("训练", fit_set.labels)
    print()

    print(f"[步骤 2/3] 训练 {config.model.upper()}...")
    model_path = os.path.join(config.models_dir, MODEL_FILES[config.model])
    if config.model == "rfc":
        model = forest.fit_forest(fit_set, config.n_trees, config.seed, n_jobs=config.n_jobs)
        forest.save_forest(model, model_path)
        depth = max(tree.depth() for tree in model.trees)
        detail = f"{config.n_trees} 棵树, 最大深度 {depth}"
    else:
        train_config = mlp.TrainConfig(batch_size=config.batch_size, epochs=config.epochs, seed=config.seed)
        model, history = mlp.train_mlp(fit_set, train_config, validation=validation,
                                       log_every=max(1, config.epochs // 10))
        mlp.save_mlp(model, model_path)
        mlp.write_history(history, store.path_for("train", "history_mlp.csv"))
        store.register("train", "history_mlp.csv")
        detail = f"{config.epochs} 轮, 最终 loss {history[-1].loss:.4f}"
    store.register("train", f"model_{config.model}", model_path)
    print()

    print("[步骤 3/3] 保存模型...")
    print(f"   {model_path}")
    return f"train: {config.model} ({detail}), {len(fit_set)} 个训练样本"


def _load_model(config: PipelineConfig, store: Store):
    path = store.require("train", f"model_{config.model}")
    if config.model == "rfc":
        return forest.load_forest(path)
    return mlp.load_mlp(path)


def _predict_proba(config: PipelineConfig, model, X: np.ndarray) -> np.ndarray:
    if config.model == "rfc":
        return forest.predict_proba_batch(model, X, n_jobs=config.n_jobs)
    return mlp.predict_proba_batch(model, X)


def stage_evaluate(config: PipelineConfig, store: Store, args) -> str:
    """验证集评估"""
    model = _load_model(config, store)
    validation = read_dataset(store.require("train", "validation.csv"))
    train = read_dataset(store.require("train", "train.csv"))

    print(f"[步骤 1/1] 评估 {config.model.upper()} ({len(validation)} 个验证样本)...")
    scores = _predict_proba(config, model, validation.X)
    report = evaluate(validation.labels, np.argmax(scores, axis=1), scores)
    train_scores = _predict_proba(config, model, train.X)
    train_accuracy = float(np.mean(np.argmax(train_scores, axis=1) == train.labels))

    write_metrics(report, store.path_for("evaluate", f"metrics_{config.model}.txt"),
                  extra={"training_accuracy": train_accuracy, "model": config.model})
    write_confusion(report.confusion, store.path_for("evaluate", f"confusion_{config.model}.csv"))
    store.register("evaluate", f"metrics_{config.model}.txt")
    store.register("evaluate", f"confusion_{config.model}.csv")

    print(f"   accuracy={report.accuracy:.4f} auc={report.auc:.4f} f1_micro={report.f1_micro:.4f} "
          f"training_accuracy={train_accuracy:.4f}")
    for c, value in enumerate(report.per_class_accuracy):
        info = get_damage_class_info(c)
        print(f"   类别 {c} ({info['name']}, {info['share']}): {value:.4f}")
    return f"evaluate: {config.model} accuracy {report.accuracy:.4f}"


def stage_predict(config: PipelineConfig, store: Store, args) -> str:
    """批量分类并报告吞吐量"""
    model = _load_model(config, store)
    if args.synthetic:
        data = generate_dataset_direct(ScenarioConfig(seed=config.seed), args.synthetic)
        source = f"合成 {args.synthetic} 个样本"
    elif args.input:
        data = read_dataset(args.input)
        source = args.input
    else:
        data = read_dataset(store.require("train", "validation.csv"))
        source = "验证集"

    print(f"[步骤 1/1] 分类 {len(data)} 个样本 ({source})...")
    start = time.perf_counter()
    scores = _predict_proba(config, model, data.X)
    elapsed = time.perf_counter() - start
    predictions = np.argmax(scores, axis=1)
    rate = len(data) / elapsed if elapsed > 0 else float("inf")
    print(f"   耗时 {elapsed:.3f}s, 吞吐量 {rate:,.0f} samples/s")

    frame = pd.DataFrame(scores, columns=[f"p{c}" for c in range(N_CLASSES)])
    frame.insert(0, "prediction", predictions)
    name = f"predictions_{config.model}.csv"
    frame.to_csv(store.path_for("predict", name), index=False, lineterminator="\n")
    store.register("predict", name)
    _print_histogram("预测", predictions)
    return f"predict: {len(data)} 个样本, {rate:,.0f} samples/s"


def stage_report(config: PipelineConfig, store: Store, args) -> str:
    """渲染混淆矩阵热力图、训练曲线和报告首页"""
    sections = []
    for kind in MODEL_FILES:
        if not store.has("evaluate", f"metrics_{kind}.txt"):
            continue
        metrics = read_metrics(store.require("evaluate", f"metrics_{kind}.txt"))
        cm = read_confusion(store.require("evaluate", f"confusion_{kind}.csv"))
        history = None
        if kind == "mlp" and store.has("train", "history_mlp.csv"):
            history = mlp.read_history(store.require("train", "history_mlp.csv"))
        sections.append(ModelSection(kind, metrics, cm, history))
    if not sections:
        raise FileNotFoundError(f"没有评估结果 ({store.store_dir / 'evaluate'}), 请先运行 evaluate")

    comparison = None
    if store.has("compare", "comparison.csv"):
        comparison = pd.read_csv(store.require("compare", "comparison.csv"), index_col=0)

    stamps = sorted(int(name[len("frame_"):-len(FRAME_SUFFIX)])
                    for name in os.listdir(config.frames_dir)
                    if name.startswith("frame_") and name.endswith(FRAME_SUFFIX)) \
        if os.path.isdir(config.frames_dir) else []
    period = (stamps[0], stamps[-1]) if stamps else None

    print(f"[步骤 1/1] 生成报告 ({len(sections)} 个模型)...")
    report_dir = store.store_dir / "report"
    files = generate_report(sections, str(report_dir), period, comparison)
    for path in files:
        store.register("report", os.path.relpath(path, store.store_dir / "report"))
    return f"report: {len(files)} 个文件 -> {report_dir}"


def stage_compare(config: PipelineConfig, store: Store, args) -> str:
    """RFC / MLP SMOTE / MLP 完整样本 对比"""
    data = read_dataset(store.require("featurize", "dataset.csv"))
    print(f"[步骤 1/1] 比较三种方案 ({len(data)} 个样本)...")
    result = run_comparison(data, config)

    write_comparison(result, store.path_for("compare", "comparison.txt"))
    result.to_frame().to_csv(store.path_for("compare", "comparison.csv"), lineterminator="\n")
    store.register("compare", "comparison.txt")
    store.register("compare", "comparison.csv")

    generator = ReportGenerator(str(store.store_dir / "compare"))
    histogram_path = generator.plot_class_histograms(result.histograms)
    store.register("compare", histogram_path.name)

    for variant, report in result.reports.items():
        print(f"   {variant}: accuracy={report.accuracy:.4f} auc={report.auc:.4f}")
    return f"compare: {len(result.reports)} 个方案"


STAGES = {
    "synth": stage_synth,
    "detect": stage_detect,
    "track": stage_track,
    "featurize": stage_featurize,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "predict": stage_predict,
    "report": stage_report,
    "compare": stage_compare,
}


def _print_histogram(title: str, labels) -> None:
    counts = class_histogram(labels)
    print(f"   {title}类别分布: " + ", ".join(f"{c}:{int(n)}" for c, n in enumerate(counts)))


# ============================================================================
# 命令行
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    """构建参数解析器，参数名与 PipelineConfig 字段对应"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value 配置文件")
    common.add_argument("--store-dir")
    common.add_argument("--frames-dir")
    common.add_argument("--models-dir")
    common.add_argument("--step-seconds", type=int)
    common.add_argument("--threshold-dbz", type=float)
    common.add_argument("--area-limit", type=float)
    common.add_argument("--radius", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--iterations", type=int)
    common.add_argument("--max-match-km", type=float)
    common.add_argument("--label-window-s", type=int)
    common.add_argument("--model", choices=sorted(MODEL_FILES))
    common.add_argument("--smote", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--filter-complete", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--train-frac", type=float)
    common.add_argument("--n-trees", type=int)
    common.add_argument("--n-jobs", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)

    parser = argparse.ArgumentParser(prog="python -m src.main", description="风暴单体损害分级流水线")
    sub = parser.add_subparsers(dest="command", metavar="{" + "|".join(SUBCOMMANDS) + "}")
    sub.required = True

    synth = sub.add_parser("synth", parents=[common], help="生成合成场景")
    synth.add_argument("--scenario", help="场景配置文件")
    for name in ("detect", "track", "featurize", "train", "evaluate", "report", "compare"):
        sub.add_parser(name, parents=[common])
    predict = sub.add_parser("predict", parents=[common], help="批量分类")
    predict.add_argument("--synthetic", type=int, help="分类 N 个直接生成的样本")
    predict.add_argument("--input", help="数据集 CSV")
    return parser


def resolve_config(args) -> PipelineConfig:
    """环境变量默认值 < 配置文件 < 命令行参数"""
    config = load_config_file(args.config) if args.config else PipelineConfig()
    overrides: Dict[str, object] = {
        "store_dir": args.store_dir,
        "frames_dir": args.frames_dir,
        "models_dir": args.models_dir,
        "step_seconds": args.step_seconds,
        "threshold_dbz": args.threshold_dbz,
        "area_limit": args.area_limit,
        "radius": args.radius,
        "alpha": args.alpha,
        "iterations": args.iterations,
        "max_match_km": args.max_match_km,
        "label_window_s": args.label_window_s,
        "model": args.model,
        "smote": args.smote,
        "filter_complete": args.filter_complete,
        "seed": args.seed,
        "train_frac": args.train_frac,
        "n_trees": args.n_trees,
        "n_jobs": args.n_jobs,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
    }
    return apply_overrides(config, overrides, source="命令行").validate()


def run_subcommand(argv: Optional[List[str]] = None) -> int:
    """
    执行一个子命令

    Args:
        argv: 命令行参数 (不含程序名)

    Returns:
        退出码: 0 成功, 1 运行错误, 2 用法错误, 130 用户中断
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = resolve_config(args)
    except (ConfigError, OSError) as e:
        print(f"❌ {e}")
        parser.print_usage()
        return 2

    print(f"[子命令] {args.command}")
    print(f"[存储目录] {config.store_dir}")
    print()

    store = Store(config.store_dir)
    store.init_db()
    start = time.perf_counter()
    try:
        summary = STAGES[args.command](config, store, args)
        elapsed = time.perf_counter() - start
        store.record_run(args.command, elapsed, summary)
        print()
        print(f"✅ {summary} ({elapsed:.2f}s)")
        return 0

    except KeyboardInterrupt:
        print("\n⚠️ 用户中断")
        return 130

    except (FileNotFoundError, ValueError, OSError) as e:
        print(f"\n❌ {args.command} 失败: {e}")
        return 1

    except Exception as e:
        print(f"\n[错误] 执行过程出错: {e}")
        import traceback
        traceback.print_exc()
        return 1

    finally:
        store.close()


def main():
    """主函数"""
    print_banner()
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
