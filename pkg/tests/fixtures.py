"""Scripted replay fixtures for full-episode tests.

Each builder returns (question, input_images, backends, sandbox, expected)
with every backend queue loaded in exact consumption order: per call step
the engine pops one meta segment, one input-gate JSON, the mindset's own
completions, and one output-gate summary.
"""

from __future__ import annotations

import io

from PIL import Image

from comind.backend import ScriptedBackend, ScriptedImageBackend
from comind.engine import BackendSet, EpisodeConfig
from comind.sandbox import StubSandbox


def png_bytes(color: tuple[int, int, int] = (40, 90, 200)) -> bytes:
    img = Image.new("RGB", (2, 2), color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def episode_config(**overrides) -> EpisodeConfig:
    config = EpisodeConfig(digest="fixture-digest", **overrides)
    return config


def bee_train_fixture():
    """Two-decision pursuit-problem replay: convergent, algorithmic,
    divergent, algorithmic, answer 240 km."""
    meta = ScriptedBackend("meta")
    gate = ScriptedBackend("gate")
    mindset = ScriptedBackend("mindset")
    image = ScriptedImageBackend()
    sandbox = StubSandbox()

    meta.push(
        "<cognitive_decision>Pursuit problem with oscillation. "
        "Convergent -> Algorithmic -> Convergent.</cognitive_decision>\n\n"
        "<call_convergent>Model the bee's path.</call_convergent>"
    )
    meta.push(
        "<insight>Series approach identified.</insight>\n\n"
        "<call_algorithmic>Compute first segments.</call_algorithmic>"
    )
    meta.push(
        "<insight>Tedious. Simpler way?</insight>\n\n"
        "<cognitive_decision>Method too complex. Divergent -> Algorithmic.</cognitive_decision>\n\n"
        "<call_divergent>Alternative approaches?</call_divergent>"
    )
    meta.push(
        "<insight>B: just compute meeting time.</insight>\n\n"
        "<call_algorithmic>300/(60+90) = 2h. 120 x 2 = ?</call_algorithmic>"
    )
    meta.push("<insight>Done.</insight>\n\n<Answer>240 km</Answer>")

    # call 1: convergent
    gate.push('{"context_text": "", "inject_images": []}')
    mindset.push(
        "Model the bee as bouncing between the trains. Each leg is shorter than "
        "the last; the distances form an infinite geometric series that could be summed."
    )
    gate.push("Infinite series: sum segments as bee bounces.")

    # call 2: algorithmic
    gate.push(
        '{"context_text": "Trains at 60 and 90 km/h start 300 km apart; bee flies 120 km/h.",'
        ' "inject_images": []}'
    )
    seg_code = "leg1 = 144.0\nleg2 = 57.6\nprint(f'Seg1: {leg1}km, Seg2: {leg2}km')"
    mindset.push(f"```python\n{seg_code}\n```")
    sandbox.register(seg_code, stdout="Seg1: 144.0km, Seg2: 57.6km\n")
    gate.push("Seg1: 144km, Seg2: 57.6km... continues.")

    # call 3: divergent
    gate.push('{"context_text": "Series summation is getting tedious.", "inject_images": []}')
    mindset.push(
        '<branch id="A">\nSum series\nMethod: sum the geometric series of bee legs.\n'
        "When applicable: always.\n</branch>\n\n"
        '<branch id="B">\nTotal flight time = meeting time\nMethod: the bee flies for '
        "exactly as long as the trains take to meet.\nWhen applicable: constant speeds.\n</branch>\n\n"
        '<branch id="C">\nRelative velocity\nMethod: work in the closing-speed frame.\n'
        "When applicable: head-on motion.\n</branch>"
    )
    mindset.push("Exploring the series: converges but requires summing many terms by hand.")
    mindset.push("Exploring flight time: trains close at 150 km/h, meet after 2 h; bee flies 240 km.")
    mindset.push("Exploring relative velocity: equivalent to the flight-time view.")
    gate.push("A: Sum series. B: Total flight time = meeting time. C: Relative velocity.")

    # call 4: algorithmic
    gate.push(
        '{"context_text": "Meeting time is 300/(60+90) hours; bee speed 120 km/h.",'
        ' "inject_images": []}'
    )
    final_code = "print(120 * (300 / (60 + 90)))"
    mindset.push(f"```python\n{final_code}\n```")
    sandbox.register(final_code, stdout="240.0\n")
    gate.push("240 km.")

    question = (
        "A bee flies between two trains 300km apart (speeds 60, 90 km/h) "
        "at 120 km/h until they meet. Distance?"
    )
    expected = {
        "answer": "240 km",
        "decisions": 2,
        "call_order": ["convergent", "algorithmic", "divergent", "algorithmic"],
    }
    return question, [], BackendSet(meta=meta, mindset=mindset, gate=gate, image=image), sandbox, expected


def sun_arms_fixture():
    """Metaphorical-scaling replay: spatial generates one figure, convergent
    fixes the mapping, algorithmic computes 3.5 x 696,340."""
    meta = ScriptedBackend("meta")
    gate = ScriptedBackend("gate")
    mindset = ScriptedBackend("mindset")
    image = ScriptedImageBackend()
    sandbox = StubSandbox()

    meta.push(
        "<cognitive_decision>Metaphorical scaling problem: map body proportions onto the Sun. "
        "Plan: Spatial (visualize proportions) -> Convergent (formalize mapping) -> "
        "Algorithmic (compute).</cognitive_decision>\n\n"
        "<call_spatial>Generate a human body proportion diagram. I need to see the relative "
        "sizes of head and arm to extract the ratio.</call_spatial>"
    )
    meta.push(
        '<insight>From the diagram: arm length is about 3.5 x head size. "Head size" here '
        "should mean the characteristic dimension of the Sun.</insight>\n\n"
        '<call_convergent>Clarify the mapping: when we say "the Sun is the head," should I '
        "use Sun's radius or diameter?</call_convergent>"
    )
    meta.push(
        "<insight>Mapping confirmed: Sun radius -> head size. Arm length = 3.5 x 696,340 km."
        "</insight>\n\n"
        "<call_algorithmic>Compute 3.5 x 696,340.</call_algorithmic>"
    )
    meta.push(
        "<insight>Arm length computed.</insight>\n\n<Answer>2,437,190 km</Answer>"
    )

    # call 1: spatial
    gate.push('{"context_text": "", "inject_images": []}')
    image.push_image(png_bytes((230, 200, 160)), notes="Adult body is 7.5 head-heights; arm is 3.5 head sizes.")
    gate.push(
        "Generated [GEN_001]. The visualization shows: adult human body is 7.5 head-heights "
        "tall; arm span equals body height; single arm (shoulder to fingertip) is 3.5 x head size."
    )

    # call 2: convergent
    gate.push('{"context_text": "Arm length is 3.5 x head size per [GEN_001].", "inject_images": []}')
    mindset.push(
        "In anatomical usage the characteristic size of a spherical head is its radius. "
        "For the Sun that radius is 696,340 km."
    )
    gate.push(
        '"Size" in anatomical context refers to the characteristic dimension: for a spherical '
        "head, the radius. Sun's radius = 696,340 km."
    )

    # call 3: algorithmic
    gate.push('{"context_text": "Arm length = 3.5 x Sun radius (696,340 km).", "inject_images": []}')
    arm_code = "print(3.5*696340)"
    mindset.push(f"```python\n{arm_code}\n```")
    sandbox.register(arm_code, stdout="2437190.0\n")
    gate.push("3.5 x 696,340 = 2,437,190 km.")

    question = "If the Sun were the head of a body, how long would its arms be?"
    expected = {
        "answer_contains": "2,437,190",
        "call_order": ["spatial", "convergent", "algorithmic"],
        "gen_artifacts": 1,
    }
    return question, [], BackendSet(meta=meta, mindset=mindset, gate=gate, image=image), sandbox, expected


def zigzag_replan_fixture():
    """Re-planning replay: the first convergent pass yields 44 degrees, the
    insight rejects it, a second decision switches to divergent, and the
    zig-zag theorem branch leads to answer A."""
    meta = ScriptedBackend("meta")
    gate = ScriptedBackend("gate")
    mindset = ScriptedBackend("mindset")
    image = ScriptedImageBackend()
    sandbox = StubSandbox()

    meta.push(
        "<cognitive_decision>Geometry problem with angles in a zig-zag path. Plan: "
        "Convergent -> Algorithmic.</cognitive_decision>\n\n"
        "<call_convergent>What geometric relationship governs the zig-zag angles?</call_convergent>"
    )
    meta.push(
        "<insight>44° is not among the options. The model is flawed.</insight>\n\n"
        "<cognitive_decision>Initial approach failed. Need alternative geometric principle. "
        "Revise to: Divergent -> Algorithmic.</cognitive_decision>\n\n"
        "<call_divergent>Alternative geometric principles for zig-zag in rectangle?</call_divergent>"
    )
    meta.push(
        "<insight>Branch B: zig-zag theorem looks promising.</insight>\n\n"
        "<call_algorithmic>Apply zig-zag theorem. Right angles: 10° + phi + 26°. "
        "Left angles: 14° + 33°. Solve.</call_algorithmic>"
    )
    meta.push("<insight>11° matches option A. Done.</insight>\n\n<Answer>A</Answer>")

    # call 1: convergent (the input figure is injected)
    gate.push('{"context_text": "Angles are 10, 14, 33, 26 degrees.", "inject_images": ["IMG_001"]}')
    mindset.push(
        "Treat the zig-zag as cumulative direction changes: net change 33° - 10° = 23°, "
        "net turning phi - 21°, so phi = 44°."
    )
    gate.push(
        "Net direction change = 33° - 10° = 23°. Net turning = phi - 21°. "
        "Equation gives phi = 44°."
    )

    # call 2: divergent
    gate.push('{"context_text": "Cumulative-turning model produced 44°, not an option.", "inject_images": []}')
    mindset.push(
        '<branch id="A">\nCumulative direction change\nMethod: sum signed turns.\n</branch>\n\n'
        '<branch id="B">\nZig-zag theorem\nMethod: sum of left-pointing angles equals sum of '
        "right-pointing angles.\n</branch>\n\n"
        '<branch id="C">\nExterior angle sum\nMethod: polygon exterior angles.\n</branch>'
    )
    mindset.push("A: already failed, the 44° result is not among the options.")
    mindset.push("B: zig-zag theorem balances left and right angles; directly solvable.")
    mindset.push("C: exterior angle sum does not apply, the path is not closed.")
    gate.push(
        "A: Cumulative direction change - already failed. B: Zig-zag theorem: sum of "
        "left-pointing angles = sum of right-pointing angles. C: Exterior angle sum - not applicable."
    )

    # call 3: algorithmic
    gate.push('{"context_text": "Right angles: 10 + phi + 26. Left angles: 14 + 33.", "inject_images": []}')
    solve_code = "print((14 + 33) - (10 + 26))"
    mindset.push(f"```python\n{solve_code}\n```")
    sandbox.register(solve_code, stdout="11\n")
    gate.push("36° + phi = 47°, so phi = 11°.")

    question = (
        "Valentin draws a zig-zag line inside a rectangle using angles 10°, 14°, 33° and 26°. "
        "How big is angle phi? Options: A. 11° B. 12° C. 16° D. 17° E. 33°"
    )
    expected = {
        "answer": "A",
        "decisions": 2,
        "call_order": ["convergent", "divergent", "algorithmic"],
        "first_convergent_result_contains": "44°",
    }
    input_images = [png_bytes((250, 250, 250))]
    return question, input_images, BackendSet(meta=meta, mindset=mindset, gate=gate, image=image), sandbox, expected


def drain_all(backends: BackendSet) -> None:
    for backend in (backends.meta, backends.mindset, backends.gate):
        backend.assert_drained()
    if backends.image is not None:
        backends.image.assert_drained()
