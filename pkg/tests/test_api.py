"""
HTTP service: scenarios, runs and metrics
"""
import pytest

from app.config import load_config
from app.vision.frames import ImageDirectory, write_video
from app.vision.metrics import evaluate
from app.vision.simulator import render, simulate


@pytest.fixture
def input_dir(tmp_path, static_rig):
    simulate(static_rig, tmp_path / "input")
    return tmp_path / "input"


@pytest.fixture
def run_config(small_config):
    return small_config.model_dump(mode="json")


def test_health_and_root(client):
    assert client.get("/health").json() == {"status": "healthy"}
    assert client.get("/").json()["docs"] == "/docs"


def test_list_and_get_scenarios(client):
    response = client.get("/scenarios/")
    assert response.status_code == 200
    listing = {s["name"]: s for s in response.json()}
    assert set(listing) == {"static", "one-move", "occluded-then-clear", "two-moves-20min"}
    assert listing["one-move"]["move_frames"] == [900]
    assert listing["occluded-then-clear"]["occluders"] == 1

    scenario = client.get("/scenarios/two-moves-20min").json()
    assert scenario["fps"] == 2.0 and len(scenario["rig_moves"]) == 2

    missing = client.get("/scenarios/nope")
    assert missing.status_code == 404
    assert missing.json()["detail"]["error"] == "InvalidScenario"


def test_render_scenario(client, tmp_path):
    response = client.post(
        "/scenarios/static/render", json={"out_dir": str(tmp_path / "r"), "size": 0.25, "time": 0.005}
    )
    assert response.status_code == 201
    body = response.json()
    assert (body["frames"], body["cameras"], body["move_frames"]) == (9, 5, [])
    assert (tmp_path / "r" / "cam4" / "frame_000008.png").is_file()

    bad = client.post("/scenarios/static/render", json={"out_dir": str(tmp_path / "x"), "size": 0})
    assert bad.status_code == 422


def test_run_lifecycle(client, tmp_path, input_dir, run_config):
    """A completed run stores its event log and its output can be evaluated"""
    response = client.post(
        "/runs/",
        json={"input_dir": str(input_dir), "output_dir": str(tmp_path / "out"), "config": run_config},
    )
    assert response.status_code == 201, response.text
    run = response.json()
    assert run["status"] == "COMPLETED"
    assert run["n_frames"] == 40 and run["n_movements"] == 0
    assert run["error"] is None and run["finished_at"] is not None

    events = client.get(f"/runs/{run['id']}/events").json()
    assert [e["seq"] for e in events] == list(range(len(events)))
    assert events[0]["kind"] == "alignment" and events[-1]["kind"] == "schedule"
    schedules = client.get(f"/runs/{run['id']}/events", params={"kind": "schedule"}).json()
    assert len(schedules) == 1
    assert schedules[0]["payload"]["segments"][-1]["end"] == 40

    assert client.get(f"/runs/{run['id']}").json()["status"] == "COMPLETED"
    conflict = client.put(f"/runs/{run['id']}", json={"status": "RUNNING"})
    assert conflict.status_code == 409

    metrics = client.post(
        "/metrics/evaluate",
        json={"video_dir": str(tmp_path / "out" / "z"), "baseline_dir": str(input_dir / "cam1")},
    )
    assert metrics.status_code == 200
    assert metrics.json()["video"]["n_frames"] == 40


def test_run_input_errors(client, tmp_path, input_dir, run_config):
    missing = client.post("/runs/", json={"input_dir": str(tmp_path / "nope"), "output_dir": str(tmp_path / "o")})
    assert missing.status_code == 404

    bad_config = client.post(
        "/runs/",
        json={"input_dir": str(input_dir), "output_dir": str(tmp_path / "o"), "config": {"movement": {"window": 4}}},
    )
    assert bad_config.status_code == 422
    assert bad_config.json()["detail"]["error"] == "InvalidConfig"
    assert client.get("/runs/").json() == []


def test_failed_run_is_recorded(client, tmp_path, input_dir, run_config):
    """A pipeline error leaves a FAILED run carrying the error record"""
    run_config["camera_count"] = 5
    response = client.post(
        "/runs/",
        json={"input_dir": str(input_dir), "output_dir": str(tmp_path / "o"), "config": run_config},
    )
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "InputMismatch" and detail["found"] == 3

    run = client.get(f"/runs/{detail['run_id']}").json()
    assert run["status"] == "FAILED"
    assert run["error"]["error"] == "InputMismatch"

    assert client.put(f"/runs/{detail['run_id']}", json={"status": "RUNNING"}).status_code == 409
    assert client.put(f"/runs/{detail['run_id']}", json={"status": "FAILED"}).status_code == 200
    assert len(client.get("/runs/", params={"status_filter": "FAILED"}).json()) == 1
    assert client.get("/runs/", params={"status_filter": "COMPLETED"}).json() == []
    assert client.get("/runs/999").status_code == 404


def test_evaluate_errors(client, tmp_path):
    assert client.post("/metrics/evaluate", json={"video_dir": str(tmp_path / "none")}).status_code == 404


def test_evaluate_honours_metrics_config(client, tmp_path, static_rig):
    """The metrics section of the request config reaches the report, as on the command line"""
    frames, _ = render(static_rig)
    write_video(tmp_path / "still", [frames.view(0, 0)] * 4)
    config = {"metrics": {"psnr_cap": 50.0, "max_keypoints": 200}}

    response = client.post("/metrics/evaluate", json={"video_dir": str(tmp_path / "still"), "config": config})
    assert response.status_code == 200, response.text
    report = response.json()
    assert report["itf_db"] == 50.0
    assert report == evaluate(ImageDirectory(tmp_path / "still"), settings=load_config(config).metrics)

    bad = client.post(
        "/metrics/evaluate", json={"video_dir": str(tmp_path / "still"), "config": {"metrics": {"psnr_cap": -1}}}
    )
    assert bad.status_code == 422
    assert bad.json()["detail"]["error"] == "InvalidConfig"
