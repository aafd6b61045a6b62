import glob
import os
import subprocess
import sys
import threading
import time
import uuid
from collections import Counter
from typing import Dict, List, Optional

import pandas as pd
import streamlit as st

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "py_modules"))

from camera_geometry import orbit_pose  # noqa: E402
from checkpoints import checkpoint_paths, load_generator  # noqa: E402
from config import outputs_root  # noqa: E402
from inversion import InversionBundle, render_bundle  # noqa: E402
from job_registry import get_jobs, search_jobs, set_registry_path  # noqa: E402
from pipeline_graph import pipeline_status  # noqa: E402
from progress import get_progress, set_base_dir, set_canceled  # noqa: E402

CLI = os.path.join(ROOT, "py_modules", "cli.py")

# --- CONFIG ---
st.set_page_config(page_title="TriInvert", layout="wide")

st.markdown("""
<style>
.main > div {max-width: 1100px; padding: 40px;}
.status-dash {background: linear-gradient(135deg, #f8fafc 0%, #ffffff 100%); border: 1px solid #eef2f7; padding: 14px 18px; border-radius: 12px; margin: 8px 0 18px 0;}
</style>
""", unsafe_allow_html=True)

# --- CONSTANTS ---
COMMANDS = ["make-data", "train-gen", "fit-depth-prior", "train-encoder", "train-afa", "eval"]

COMMAND_FLAGS = {
    "train-encoder": ["--no-latent-disc", "--no-background-loss"],
    "train-afa": ["--no-mix", "--no-background-loss"],
    "eval": ["--no-afa"],
}

STATUS_BADGE = {
    "pending": ("#1f77b4", "Pending"), "running": ("#ff7f0e", "Running"),
    "canceling": ("#9467bd", "Canceling"), "done": ("#2ca02c", "Done"),
    "completed": ("#2ca02c", "Completed"), "error": ("#d62728", "Error"),
    "canceled": ("#7f7f7f", "Canceled"),
}

TAB_OPTIONS = ["🚀 Run Pipeline", "📋 Jobs", "🔭 Bundles", "📈 Report"]


def render_badge(status: str) -> str:
    color, text = STATUS_BADGE.get(str(status).lower(), ("#7f7f7f", str(status)))
    return f"<span style='display:inline-block;padding:2px 8px;border-radius:12px;background:{color};color:white;font-size:12px'>{text}</span>"


def use_out_dir(out_dir: str) -> None:
    set_base_dir(out_dir)
    set_registry_path(out_dir)


def launch(command: str, out_dir: str, task_id: str, flags: List[str], config_path: str = "",
           extra: Optional[List[str]] = None) -> None:
    """Run one CLI command in a background thread; progress arrives through the snapshot files."""
    argv = [sys.executable, CLI, "--out", out_dir, "--task-id", task_id]
    if config_path:
        argv += ["--config", config_path]
    argv += [command, *flags, *(extra or [])]
    threading.Thread(target=lambda: subprocess.run(argv, capture_output=True), daemon=True).start()


@st.cache_resource(show_spinner=False)
def cached_generator(path: str, mtime: float):
    return load_generator(path)


def render_status_dashboard(out_dir: str) -> None:
    jobs = get_jobs()
    counts = Counter(str(j.get("status", "")).lower() for j in jobs)
    cols = st.columns(4)
    cols[0].metric("✅ Completed", counts.get("completed", 0))
    cols[1].metric("🕒 Running", counts.get("running", 0) + counts.get("pending", 0))
    cols[2].metric("⛔ Canceled", counts.get("canceled", 0))
    cols[3].metric("⚠️ Errors", counts.get("error", 0))

    st.caption("Artifacts")
    status = pipeline_status(out_dir)
    chips = st.columns(len(status))
    for col, (name, present) in zip(chips, sorted(status.items())):
        col.markdown(f"**{name}**<br/>{render_badge('done' if present else 'pending')}", unsafe_allow_html=True)
    st.divider()


def loss_curves(out_dir: str) -> Dict[str, pd.DataFrame]:
    curves = {}
    for path in sorted(glob.glob(os.path.join(out_dir, "logs", "*.csv"))):
        try:
            curves[os.path.splitext(os.path.basename(path))[0]] = pd.read_csv(path).set_index("iter")
        except Exception:
            continue
    return curves


# --- SESSION STATE ---
for key, default in [("active_tab", TAB_OPTIONS[0]), ("task_id", ""), ("running", False), ("last_progress", {})]:
    if key not in st.session_state:
        st.session_state[key] = default

# --- SIDEBAR ---
with st.sidebar:
    st.title("TriInvert")
    out_dir = st.text_input("Artifact root", value=outputs_root())
    config_path = st.text_input("Config JSON (optional)", value="")
    use_out_dir(out_dir)
    st.divider()
    st.subheader("📑 Navigation")
    selected_tab = st.radio("Select Tab:", TAB_OPTIONS, index=TAB_OPTIONS.index(st.session_state.active_tab))
    if selected_tab != st.session_state.active_tab:
        st.session_state.active_tab = selected_tab
        st.rerun()

# --- TABS ---
if st.session_state.active_tab == "🚀 Run Pipeline":
    st.header("🚀 Run Pipeline")
    render_status_dashboard(out_dir)

    command = st.selectbox("Command", COMMANDS, disabled=st.session_state.running)
    flags = [f for f in COMMAND_FLAGS.get(command, []) if st.checkbox(f, key=f"{command}{f}")]
    extra = []
    if command == "eval":
        extra = ["--source", st.radio("Source", ["generator", "dataset"], horizontal=True)]

    col1, col2 = st.columns(2)
    with col1:
        if st.button("Start", disabled=st.session_state.running):
            task_id = str(uuid.uuid4())
            st.session_state.task_id = task_id
            st.session_state.running = True
            st.session_state.last_progress = {"status": "pending", "percent": 0}
            launch(command, out_dir, task_id, flags, config_path, extra)
            st.rerun()
    with col2:
        if st.session_state.running and st.button("Cancel"):
            set_canceled(st.session_state.task_id, "Canceled by user")
            st.rerun()

    if st.session_state.running and st.session_state.task_id:
        progress_bar = st.progress(0)
        status_text = st.empty()
        for _ in range(600):
            data = get_progress(st.session_state.task_id)
            st.session_state.last_progress = data
            pct = int(data.get("percent", 0))
            progress_bar.progress(min(pct, 100))
            losses = data.get("losses", {})
            loss_text = ", ".join(f"{k}={v:.4g}" for k, v in losses.items())
            status_text.markdown(
                f"Status: {render_badge(data.get('status', 'pending'))} — {pct}% "
                f"| {data.get('stage', '')} {data.get('iteration', '')} {f'| {loss_text}' if loss_text else ''}",
                unsafe_allow_html=True)
            if data.get("status") in {"done", "error", "canceled"}:
                st.session_state.running = False
                break
            time.sleep(1)

    progress = st.session_state.last_progress
    if progress.get("status") == "error":
        st.error(f"Run failed: {progress.get('message', 'unknown error')}")

    st.subheader("Loss curves")
    curves = loss_curves(out_dir)
    if not curves:
        st.info("No training logs yet.")
    for name, df in curves.items():
        st.caption(name)
        st.line_chart(df)

elif st.session_state.active_tab == "📋 Jobs":
    st.header("📋 Jobs")
    query = st.text_input("Search (id, command, arguments)")
    status = st.selectbox("Status", ["", "pending", "running", "completed", "canceled", "error"])
    jobs = search_jobs(query, status)
    if not jobs:
        st.info("No jobs recorded.")
    for job in jobs:
        with st.expander(f"{job.get('command', '?')} — {job.get('id', '')[:8]} — {job.get('created_at', '')}"):
            st.markdown(render_badge(job.get("status", "")), unsafe_allow_html=True)
            st.json({"args": job.get("args", {}), "details": job.get("details", {}),
                     "history": job.get("history", [])})

elif st.session_state.active_tab == "🔭 Bundles":
    st.header("🔭 Bundles")
    bundles = sorted(glob.glob(os.path.join(out_dir, "bundles", "*.tpck")))
    gen_path = checkpoint_paths(out_dir)["generator"]
    if not bundles:
        st.info("No inversion bundles yet (run `invert`).")
    elif not os.path.exists(gen_path):
        st.warning("Generator checkpoint missing.")
    else:
        path = st.selectbox("Bundle", bundles, format_func=os.path.basename)
        yaw = st.slider("Yaw (degrees)", -60.0, 60.0, 0.0, 5.0)
        generator, cfg = cached_generator(gen_path, os.path.getmtime(gen_path))
        bundle = InversionBundle.load(path)
        out = render_bundle(generator, bundle, orbit_pose(yaw, 0.0, cfg.camera.distance), cfg)
        col1, col2 = st.columns(2)
        col1.image(out.image[0].permute(1, 2, 0).clamp(0, 1).numpy(), caption=f"yaw {yaw:+.0f}°", width=256)
        depth = out.depth[0]
        col2.image(((depth - depth.min()) / (depth.max() - depth.min()).clamp_min(1e-6)).numpy(),
                   caption="depth", width=256)
        st.json(bundle.meta)

elif st.session_state.active_tab == "📈 Report":
    st.header("📈 Report")
    report_md = os.path.join(out_dir, "reports", "report.md")
    metrics_csv = os.path.join(out_dir, "reports", "metrics.csv")
    if os.path.exists(metrics_csv):
        df = pd.read_csv(metrics_csv)
        st.dataframe(df, use_container_width=True)
        st.download_button("Download metrics.csv", df.to_csv(index=False), file_name="metrics.csv")
    if os.path.exists(report_md):
        with open(report_md, "r", encoding="utf-8") as f:
            st.markdown(f.read(), unsafe_allow_html=True)
    else:
        st.info("No report yet (run `eval`).")
