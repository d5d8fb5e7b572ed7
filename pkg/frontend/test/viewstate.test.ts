import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { parseTraceLine, translatePointer } from "../src/events.js";
import type { InterfaceEvent, Stats } from "../src/types.js";
import {
  applyEvent, initialView, layoutToScreen, replay, screenToLayout,
  visibleRect, zoomOf, type ViewState,
} from "../src/viewstate.js";

const stats: Stats = {
  objects: 10, points: 10, bounds: [-10, -10, 10, 10],
  zoom_levels: 6, base_budget: 256, tiles: 1, build_hash: "t",
};

const ev = (kind: string, extra: Partial<InterfaceEvent> = {}): InterfaceEvent =>
  ({ kind, timestamp: 0, magnitude: 1, ...extra });

function start(): ViewState {
  return initialView(stats, 1000, 800);
}

describe("initial view and zoom derivation", () => {
  it("fits the full bounds at zoom 0", () => {
    const s = start();
    expect(zoomOf(s)).toBe(0);
    const rect = visibleRect(s);
    expect(rect.x0).toBeLessThanOrEqual(-10);
    expect(rect.x1).toBeGreaterThanOrEqual(10);
    expect(rect.y0).toBeLessThanOrEqual(-10);
    expect(rect.y1).toBeGreaterThanOrEqual(10);
  });

  it("derives the level from the scale and clamps at Z-1", () => {
    let s = start();
    const base = s.scale;
    s = { ...s, scale: base / 2.5 };
    expect(zoomOf(s)).toBe(Math.floor(-Math.log2((1000 * s.scale) / 20)));
    s = { ...s, scale: base / 1e6 };
    expect(zoomOf(s)).toBe(5);
    s = { ...s, scale: base * 50 };
    expect(zoomOf(s)).toBe(0);
  });

  it("screen/layout transforms are inverses", () => {
    const s = start();
    const [lx, ly] = screenToLayout(s, 222, 333);
    const [px, py] = layoutToScreen(s, lx, ly);
    expect(px).toBeCloseTo(222, 9);
    expect(py).toBeCloseTo(333, 9);
  });
});

describe("zoom events", () => {
  it("ZoomIn then ZoomOut about the same cursor restores scale within 1e-9", () => {
    let s = applyEvent(start(), ev("CursorMove", { x: 0.3, y: 0.7 }));
    const before = s;
    s = applyEvent(s, ev("ZoomIn"));
    s = applyEvent(s, ev("ZoomOut"));
    expect(Math.abs(s.scale - before.scale) / before.scale).toBeLessThan(1e-9);
    expect(Math.abs(s.centerX - before.centerX)).toBeLessThan(1e-9);
    expect(Math.abs(s.centerY - before.centerY)).toBeLessThan(1e-9);
  });

  it("zooming about the cursor keeps the anchored layout point fixed", () => {
    let s = applyEvent(start(), ev("CursorMove", { x: 0.25, y: 0.8 }));
    const [ax, ay] = screenToLayout(s, 0.25 * s.viewW, 0.8 * s.viewH);
    s = applyEvent(s, ev("ZoomIn"));
    const [ax2, ay2] = screenToLayout(s, 0.25 * s.viewW, 0.8 * s.viewH);
    expect(ax2).toBeCloseTo(ax, 9);
    expect(ay2).toBeCloseTo(ay, 9);
    expect(s.scale).toBeCloseTo(start().scale / 1.25, 12);
  });

  it("zooms about the center when no cursor exists", () => {
    const s0 = start();
    const s1 = applyEvent(s0, ev("ZoomIn"));
    expect(s1.centerX).toBe(s0.centerX);
    expect(s1.centerY).toBe(s0.centerY);
  });
});

describe("pan events", () => {
  it("scroll moves a quarter viewport height", () => {
    const s0 = start();
    const up = applyEvent(s0, ev("ScrollUp"));
    expect(up.centerY).toBeCloseTo(s0.centerY + 0.25 * s0.viewH * s0.scale, 12);
    const down = applyEvent(s0, ev("ScrollDown"));
    expect(down.centerY).toBeCloseTo(s0.centerY - 0.25 * s0.viewH * s0.scale, 12);
  });

  it("advance moves a quarter viewport width", () => {
    const s0 = start();
    const right = applyEvent(s0, ev("AdvanceRight"));
    expect(right.centerX).toBeCloseTo(s0.centerX + 0.25 * s0.viewW * s0.scale, 12);
    const left = applyEvent(s0, ev("AdvanceLeft"));
    expect(left.centerX).toBeCloseTo(s0.centerX - 0.25 * s0.viewW * s0.scale, 12);
  });
});

describe("selection and dragging", () => {
  it("SelectDown with a nearby thumbnail picks it", () => {
    let s = applyEvent(start(), ev("CursorMove", { x: 0.5, y: 0.5 }));
    s = applyEvent(s, ev("SelectDown"), () => "obj-7");
    expect(s.selectedId).toBe("obj-7");
    expect(s.dragging).toBe(false);
  });

  it("SelectDown away from thumbnails starts a drag-pan", () => {
    let s = applyEvent(start(), ev("CursorMove", { x: 0.5, y: 0.5 }));
    s = applyEvent(s, ev("SelectDown"));
    expect(s.dragging).toBe(true);
    const before = s;
    s = applyEvent(s, ev("CursorMove", { x: 0.6, y: 0.5 }));
    // content follows the cursor: view center moves the opposite way
    expect(s.centerX).toBeCloseTo(
      before.centerX - 0.1 * before.viewW * before.scale, 9);
    s = applyEvent(s, ev("SelectUp"));
    expect(s.dragging).toBe(false);
    const after = s;
    s = applyEvent(s, ev("CursorMove", { x: 0.7, y: 0.5 }));
    expect(s.centerX).toBe(after.centerX); // no pan once released
  });
});

describe("refresh and unknown events", () => {
  it("Refresh restores the initial full-bounds view from any state", () => {
    let s = start();
    for (const kind of ["ZoomIn", "ZoomIn", "AdvanceRight", "ScrollDown"]) {
      s = applyEvent(s, ev(kind));
    }
    s = applyEvent(s, ev("Refresh"));
    const fresh = start();
    expect(s.centerX).toBe(fresh.centerX);
    expect(s.centerY).toBe(fresh.centerY);
    expect(s.scale).toBe(fresh.scale);
  });

  it("unknown kinds leave the state untouched", () => {
    const s0 = start();
    expect(applyEvent(s0, ev("TeleportHome"))).toEqual(s0);
  });

  it("SwitchHands has no view effect", () => {
    const s0 = start();
    expect(applyEvent(s0, ev("SwitchHands"))).toEqual(s0);
  });
});

describe("golden 50-event replay", () => {
  const fixture = JSON.parse(readFileSync(
    new URL("./fixtures/trace50.json", import.meta.url), "utf-8"));

  it("replays to the golden final state within 1e-9", () => {
    const initial = initialView(fixture.stats, fixture.viewW, fixture.viewH);
    const final = replay(initial, fixture.events);
    expect(fixture.events.length).toBe(50);
    expect(Math.abs(final.scale - fixture.golden.scale)
           / fixture.golden.scale).toBeLessThan(1e-9);
    expect(Math.abs(final.centerX - fixture.golden.centerX)).toBeLessThan(1e-9);
    expect(Math.abs(final.centerY - fixture.golden.centerY)).toBeLessThan(1e-9);
    expect(final.dragging).toBe(fixture.golden.dragging);
    expect(final.selectedId).toBe(fixture.golden.selectedId);
  });

  it("replay is deterministic", () => {
    const initial = initialView(fixture.stats, fixture.viewW, fixture.viewH);
    const a = replay(initial, fixture.events);
    const b = replay(initial, fixture.events);
    expect(a).toEqual(b);
  });
});

describe("trace-line parsing", () => {
  it("parses discrete and cursor events", () => {
    expect(parseTraceLine("1.500\tZoomIn\t1.000000")).toEqual(
      { kind: "ZoomIn", timestamp: 1.5, magnitude: 1 });
    expect(parseTraceLine("2.000\tCursorMove\t0.250000,0.750000")).toEqual(
      { kind: "CursorMove", timestamp: 2, magnitude: 0, x: 0.25, y: 0.75 });
  });

  it("rejects malformed lines", () => {
    expect(parseTraceLine("")).toBeNull();
    expect(parseTraceLine("nonsense")).toBeNull();
    expect(parseTraceLine("x\tZoomIn\t1.0")).toBeNull();
    expect(parseTraceLine("1.0\tCursorMove\tnot,numbers")).toBeNull();
  });
});

describe("pointer translation shares the event vocabulary", () => {
  const base = { viewW: 1000, viewH: 800, timestamp: 1 } as const;

  it("wheel becomes CursorMove + Zoom", () => {
    const events = translatePointer(
      { type: "wheel", x: 250, y: 400, deltaY: -3, ...base });
    expect(events.map((e) => e.kind)).toEqual(["CursorMove", "ZoomIn"]);
    expect(events[0].x).toBeCloseTo(0.25, 12);
    expect(translatePointer({ type: "wheel", x: 0, y: 0, deltaY: 5, ...base })
      .map((e) => e.kind)).toEqual(["CursorMove", "ZoomOut"]);
  });

  it("mouse down/up become SelectDown/SelectUp", () => {
    expect(translatePointer({ type: "down", x: 1, y: 1, ...base })
      .map((e) => e.kind)).toEqual(["CursorMove", "SelectDown"]);
    expect(translatePointer({ type: "up", ...base })
      .map((e) => e.kind)).toEqual(["SelectUp"]);
  });

  it("keys map to scroll/advance/zoom/refresh", () => {
    const kind = (key: string) =>
      translatePointer({ type: "key", key, ...base }).map((e) => e.kind);
    expect(kind("ArrowUp")).toEqual(["ScrollUp"]);
    expect(kind("ArrowLeft")).toEqual(["AdvanceLeft"]);
    expect(kind("r")).toEqual(["Refresh"]);
    expect(kind("q")).toEqual([]);
  });

  it("pointer events replay identically through the reducer", () => {
    const inputs = [
      translatePointer({ type: "wheel", x: 300, y: 300, deltaY: -1, ...base }),
      translatePointer({ type: "down", x: 300, y: 300, ...base }),
      translatePointer({ type: "move", x: 350, y: 320, ...base }),
      translatePointer({ type: "up", ...base }),
    ].flat();
    const a = replay(start(), inputs);
    const b = replay(start(), inputs);
    expect(a).toEqual(b);
  });
});
