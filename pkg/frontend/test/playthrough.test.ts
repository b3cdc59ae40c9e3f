import { describe, expect, it } from "vitest";

import { ApiClient, type ObservationPayload } from "../src/api.js";
import { SessionState } from "../src/state.js";

/** Scripted stand-in for the episode server, mirroring its semantics:
 * feasibility gating, one record entry per applied action, stop-based
 * termination, and success within 20 m of the target. */
class MockServer {
  position: [number, number, number] = [20, 20, 12];
  yaw = 0;
  steps: string[] = [];
  terminated = false;
  readonly target: [number, number, number] = [40, 20, 2];
  readonly stepSize = 5;

  private feasible(): string[] {
    const out: string[] = [];
    const moves: Record<string, [number, number, number]> = {
      MoveForward: this.heading(1),
      MoveBackward: this.heading(-1),
      MoveLeft: this.left(1),
      MoveRight: this.left(-1),
      Ascend: [0, 0, this.stepSize],
      Descend: [0, 0, -this.stepSize],
    };
    for (const [name, delta] of Object.entries(moves)) {
      const next = this.position.map((v, i) => v + delta[i]);
      const inBounds =
        next.every((v) => v >= 0 && v <= 60) && next[2] >= 1.0;
      if (inBounds) out.push(name);
    }
    out.push("TurnLeft45", "TurnRight45");
    return out;
  }

  private heading(sign: number): [number, number, number] {
    const rad = (this.yaw * Math.PI) / 180;
    return [
      sign * this.stepSize * Math.cos(rad),
      sign * this.stepSize * Math.sin(rad),
      0,
    ];
  }

  private left(sign: number): [number, number, number] {
    const rad = (this.yaw * Math.PI) / 180;
    return [
      -sign * this.stepSize * Math.sin(rad),
      sign * this.stepSize * Math.cos(rad),
      0,
    ];
  }

  private observation(): ObservationPayload {
    return {
      session_id: "fixture",
      step_index: this.steps.length,
      image: `/episodes/fixture/images/${this.steps.length}`,
      pose: { position: [...this.position], yaw_deg: this.yaw, pitch_deg: -20 },
      feasible_actions: this.feasible(),
      status: this.terminated ? "Terminated" : "Active",
      termination: this.terminated ? "Stopped" : null,
    };
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    const route = url.replace(/^https?:\/\/[^/]+/, "");
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "Content-Type": "application/json" },
      });

    if (route === "/tasks") {
      return json(200, [
        { task_id: "fixture-t0", difficulty: "Easy", text: "Search for the tool shed" },
      ]);
    }
    if (route === "/episodes" && init?.method === "POST") {
      return json(200, {
        session_id: "fixture",
        target: { image: "/episodes/fixture/target", text: "Search for the tool shed" },
        observation: this.observation(),
      });
    }
    if (route === "/episodes/fixture/observation") {
      return json(200, this.observation());
    }
    if (route === "/episodes/fixture/action" && init?.method === "POST") {
      if (this.terminated) {
        return json(409, { error: "session already terminated" });
      }
      const action = body.action as string;
      if (action !== "Stop" && !this.feasible().includes(action)) {
        return json(409, { error: "infeasible", feasible_actions: this.feasible() });
      }
      this.steps.push(action);
      if (action === "Stop") {
        this.terminated = true;
      } else if (action === "TurnLeft45") {
        this.yaw = (this.yaw + 45) % 360;
      } else if (action === "TurnRight45") {
        this.yaw = (this.yaw + 315) % 360;
      } else {
        const moves: Record<string, [number, number, number]> = {
          MoveForward: this.heading(1),
          MoveBackward: this.heading(-1),
          MoveLeft: this.left(1),
          MoveRight: this.left(-1),
          Ascend: [0, 0, this.stepSize],
          Descend: [0, 0, -this.stepSize],
        };
        const delta = moves[action];
        this.position = this.position.map((v, i) => v + delta[i]) as [
          number, number, number,
        ];
      }
      return json(200, { ...this.observation(), termination: this.terminated ? "Stopped" : null });
    }
    if (route === "/episodes/fixture/result") {
      if (!this.terminated) return json(409, { error: "active" });
      const d = Math.hypot(
        this.position[0] - this.target[0],
        this.position[1] - this.target[1],
        this.position[2] - this.target[2],
      );
      return json(200, {
        termination: "Stopped",
        steps: this.steps.length,
        path_length: 0,
        final_pose: { position: [...this.position], yaw_deg: this.yaw, pitch_deg: -20 },
        found_target: d <= 20,
        distance_to_target: d,
        success: d <= 20 ? 1 : 0,
      });
    }
    return json(404, { detail: "no route" });
  };
}

describe("scripted playthrough of the fixture task", () => {
  it("completes the easy task in at most 15 clicks with one action per click", async () => {
    const server = new MockServer();
    const client = new ApiClient("", server.fetch);

    const created = await client.createEpisode("fixture-t0");
    const state = new SessionState(created.observation);

    // Known solution: fly east toward the shed, descend, stop.
    const solution = [
      "MoveForward", "MoveForward", "MoveForward",
      "Descend", "Descend",
      "MoveForward",
      "Stop",
    ];
    let clicks = 0;
    for (const action of solution) {
      expect(state.canAct(action)).toBe(true);
      state.beginAction(action);
      clicks += 1;
      const obs = await client.act("fixture", action);
      state.completeAction(obs);
    }

    expect(clicks).toBeLessThanOrEqual(15);
    expect(state.terminated).toBe(true);
    expect(state.confirmedClicks).toBe(clicks);
    // One click, one recorded action, in order.
    expect(server.steps).toEqual(solution);

    const result = await client.result("fixture");
    expect(result.steps).toBe(solution.length);
    expect(result.success).toBe(1);
  });

  it("keeps a rejected action out of the record", async () => {
    const server = new MockServer();
    const client = new ApiClient("", server.fetch);
    const created = await client.createEpisode("fixture-t0");
    const state = new SessionState(created.observation);

    // Descend to the floor, then try one descend too many.
    for (const action of ["Descend", "Descend"]) {
      state.beginAction(action);
      state.completeAction(await client.act("fixture", action));
    }
    expect(state.canAct("Descend")).toBe(false); // button disabled
    // Racing the server anyway: rejection surfaces, nothing recorded.
    await expect(client.act("fixture", "Descend")).rejects.toMatchObject({ status: 409 });
    expect(server.steps).toEqual(["Descend", "Descend"]);
  });
});
