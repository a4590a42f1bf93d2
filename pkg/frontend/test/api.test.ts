import { describe, expect, test } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { FakeService, twoClusterCatalog } from "./fake_service.js";

function client(service = new FakeService(twoClusterCatalog(), 0.5)) {
  return { api: new ApiClient("", service.fetch), service };
}

describe("ApiClient", () => {
  test("create, label, query round-trip unwraps envelopes", async () => {
    const { api } = client();
    const sid = await api.createSession({ variant: "B", seed: 7 });
    expect(sid).toMatch(/^fake-/);
    await api.addLabels(sid, [{ id: 0, label: 1 }]);
    const outcome = await api.query(sid, {});
    expect(outcome.ids).toContain(0);
    expect(outcome.timings?.t_query).toBeGreaterThan(0);
  });

  test("error envelopes raise ApiError with status", async () => {
    const { api } = client();
    await expect(api.addLabels("nope", [{ id: 0, label: 1 }])).rejects.toThrowError(
      ApiError,
    );
    try {
      await api.addLabels("nope", [{ id: 0, label: 1 }]);
    } catch (err) {
      expect((err as ApiError).status).toBe(404);
    }
  });

  test("duplicate ids in one batch are rejected with 400", async () => {
    const { api } = client();
    const sid = await api.createSession({});
    try {
      await api.addLabels(sid, [
        { id: 1, label: 1 },
        { id: 1, label: 0 },
      ]);
      expect.unreachable("should have thrown");
    } catch (err) {
      expect((err as ApiError).status).toBe(400);
    }
  });

  test("query without positives maps to 422", async () => {
    const { api } = client();
    const sid = await api.createSession({});
    await api.addLabels(sid, [{ id: 3, label: 0 }]);
    try {
      await api.query(sid, {});
      expect.unreachable("should have thrown");
    } catch (err) {
      expect((err as ApiError).status).toBe(422);
    }
  });

  test("session state reports accumulated labels", async () => {
    const { api } = client();
    const sid = await api.createSession({ seed: 3 });
    await api.addLabels(sid, [
      { id: 2, label: 1 },
      { id: 5, label: 0 },
    ]);
    const snapshot = await api.getSession(sid);
    expect(snapshot.labels).toEqual([
      { id: 2, label: 1 },
      { id: 5, label: 0 },
    ]);
  });
});
