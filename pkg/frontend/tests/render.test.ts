// Rendering: predefined-question buttons verbatim, chips, resource panel.

import { describe, expect, it } from "vitest";

import type { PersonaInfo } from "../src/api.js";
import {
  escapeHtml,
  patientCardsHtml,
  personaPickerHtml,
  provenanceChipsHtml,
  questionButtonsHtml,
  resourcePanelHtml,
  transcriptHtml,
} from "../src/render.js";
import { ChatStore, decodeStreamEvent } from "../src/state.js";

// The clinician question set the service publishes; button labels must
// match these strings exactly.
const CLINICIAN_QUESTIONS = [
  "What treatment options are available for this patient's conditions?",
  "Summarize the medications and conditions for this patient.",
  "List recent procedures and relevant laboratory insights.",
];

const CLINICIAN: PersonaInfo = {
  id: "clinician",
  displayName: "Clinician",
  predefinedQuestions: CLINICIAN_QUESTIONS,
};

function buttonLabels(html: string): string[] {
  return [...html.matchAll(/<button[^>]*>(.*?)<\/button>/g)].map((m) => m[1]!);
}

describe("question buttons", () => {
  it("renders the clinician questions verbatim", () => {
    const labels = buttonLabels(questionButtonsHtml(CLINICIAN.predefinedQuestions)).map((label) =>
      label.replaceAll("&#39;", "'").replaceAll("&quot;", '"'),
    );
    expect(labels).toEqual(CLINICIAN_QUESTIONS);
  });

  it("carries the question in a data attribute for the shared submit path", () => {
    const html = questionButtonsHtml(["Summarize the medications and conditions for this patient."]);
    expect(html).toContain('data-question="Summarize the medications and conditions for this patient."');
  });
});

describe("provenance chips", () => {
  it("one chip per reference, labeled Type/id", () => {
    const refs = ["Condition/c1", "MedicationRequest/m1"];
    const html = provenanceChipsHtml(refs);
    expect(buttonLabels(html)).toEqual(refs);
    expect(html).toContain('data-ref="Condition/c1"');
    expect(html).toContain('data-ref="MedicationRequest/m1"');
  });

  it("completed turn with facts shows chips in the transcript", () => {
    const store = new ChatStore();
    store.openSession("s1");
    store.beginTurn("q");
    for (const frame of [
      { event: "meta", data: '{"sessionId":"s1","turnIndex":0}' },
      { event: "token", data: '{"text":"answer"}' },
      { event: "provenance", data: '["Condition/c1"]' },
      { event: "done", data: "{}" },
    ]) {
      store.applyStream(decodeStreamEvent(frame));
    }
    const html = transcriptHtml(store);
    expect(html).toContain('class="chip"');
    expect(html).toContain("Condition/c1");
  });
});

describe("resource panel", () => {
  it("renders the fetched FHIR body verbatim as pretty JSON", () => {
    const body = {
      resourceType: "Condition",
      id: "c1",
      subject: { reference: "Patient/p1" },
      code: { text: "Asthma" },
    };
    const html = resourcePanelHtml("Condition/c1", body);
    expect(html).toContain("Condition/c1");
    const pre = /<pre>([\s\S]*)<\/pre>/.exec(html)![1]!;
    const unescaped = pre
      .replaceAll("&quot;", '"')
      .replaceAll("&lt;", "<")
      .replaceAll("&gt;", ">")
      .replaceAll("&amp;", "&");
    expect(JSON.parse(unescaped)).toEqual(body);
  });
});

describe("pickers", () => {
  it("renders personas as a radio group in API order", () => {
    const personas: PersonaInfo[] = [
      CLINICIAN,
      { id: "caregiver", displayName: "Caregiver", predefinedQuestions: ["a", "b", "c"] },
      { id: "patient", displayName: "Patient", predefinedQuestions: ["d", "e", "f"] },
    ];
    const html = personaPickerHtml(personas, "clinician");
    const values = [...html.matchAll(/value="([^"]+)"/g)].map((m) => m[1]);
    expect(values).toEqual(["clinician", "caregiver", "patient"]);
    expect(html).toContain('value="clinician" checked');
  });

  it("patient cards show the absent-value placeholder as sent", () => {
    const html = patientCardsHtml(
      [{ id: "p3", name: "Alex Quist", birthDate: "—", gender: "—" }],
      null,
    );
    expect(html).toContain("Alex Quist");
    expect(html).toContain("Born — · —");
  });
});

describe("escapeHtml", () => {
  it("escapes markup-significant characters", () => {
    expect(escapeHtml('<b>&"x"')).toBe("&lt;b&gt;&amp;&quot;x&quot;");
  });
});
