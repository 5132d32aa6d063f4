# Writes messy.json: model answers with hand-labeled expected parses.
import json

E = []
def add(fmt, text, label=None, op=None, value=None, error=None, etype=None, etext=None):
    E.append({"format": fmt, "text": text, "expect": {"label": label, "operation": op, "value": value,
              "error": error, "element_type": etype, "element_text": etext}})

L, N, A = "letter-choice", "number-label", "attribute-fields"
add(L, "The target is the search button.\n\nELEMENT: B\nACTION: CLICK\nVALUE: None", "B", "Click")
add(L, "ELEMENT: A\nACTION: CLICK\nVALUE: None\n\nWait, re-checking the screenshot.\n\nELEMENT: D\nACTION: CLICK\nVALUE: None", "D", "Click")
add(L, "**ELEMENT:** C\n**ACTION:** TYPE\n**VALUE:** New York", "C", "Type", "New York")
add(L, "- ELEMENT: E\n- ACTION: SELECT\n- VALUE: \"Large truck\"", "E", "Select", "Large truck")
add(L, "Final Answer:\n1. ELEMENT: F\n2. ACTION: type\n3. VALUE: 12/10/2023", "F", "Type", "12/10/2023")
add(L, "element: g\naction: click\nvalue: none", "G", "Click")
add(L, "ELEMENT: R. None of the other options match the correct element\nACTION: CLICK\nVALUE: None", "R", "Click")
add(L, "ELEMENT: None of the other options\nACTION: CLICK\nVALUE: None", "not-listed", "Click")
add(L, "ELEMENT: (H)\nACTION: CLICK\nVALUE: None", "H", "Click")
add(L, "ELEMENT: Option AB\nACTION: CLICK\nVALUE: None", "AB", "Click")
add(L, "I would pick B.\nACTION: CLICK\nVALUE: None", error="ELEMENT")
add(L, "ELEMENT: K\nACTION: TYPE\nVALUE: None", error="VALUE")
add(L, "ELEMENT: K\nACTION: DRAG\nVALUE: None", error="ACTION")
add(L, "ELEMENT: J\nACTION: HOVER\nVALUE: None", "J", "Click")
add(L, "ELEMENT: A\nACTION: PRESS ENTER\nVALUE: None", "A", "PressEnter")
add(L, "> ELEMENT: Q\n> ACTION: SELECT\n> VALUE: 'Price: low to high'", "Q", "Select", "Price: low to high")
add(L, "ELEMENT:B\nACTION:CLICK\nVALUE:None", "B", "Click")
add(L, "ELEMENT : C\nACTION : TYPE\nVALUE : boston", "C", "Type", "boston")
add(N, "The Find Your Truck button is marked 5.\n\nELEMENT: 5\nACTION: CLICK\nVALUE: None", "5", "Click")
add(N, "ELEMENT: NA\nACTION: CLICK\nVALUE: None", "not-listed", "Click")
add(N, "ELEMENT: [12]\nACTION: TYPE\nVALUE: SJD", "12", "Type", "SJD")
add(N, "ELEMENT: 3\nACTION: CLICK\nVALUE: None\nELEMENT: 07\nACTION: CLICK\nVALUE: None", "7", "Click")
add(N, "## Final\nELEMENT: N/A\nACTION: TERMINATE\nVALUE: None", "not-listed", "Terminate")
add(N, "ELEMENT: 4\nACTION: SCROLL DOWN\nVALUE: None", "4", "Scroll", "DOWN")
add(N, "ELEMENT: the red box\nACTION: CLICK\nVALUE: None", error="ELEMENT")
add(A, "ELEMENT: The orange button right of the date field\nELEMENT TYPE: BUTTON\nELEMENT TEXT: Find Your Truck\nACTION: CLICK\nVALUE: None",
    op="Click", etype="BUTTON", etext="Find Your Truck")
add(A, "ELEMENT: location box\nELEMENT TYPE: textbox\nELEMENT TEXT: City or ZIP\nACTION: TYPE\nVALUE: SJD",
    op="Type", value="SJD", etype="TEXTBOX", etext="City or ZIP")
add(A, "ELEMENT: size menu\nELEMENT TYPE: SELECT BOX\nELEMENT TEXT: \"Small truck\"\nACTION: SELECT\nVALUE: Large truck",
    op="Select", value="Large truck", etype="SELECTBOX", etext="Small truck")
add(A, "ELEMENT: Schedule button\nELEMENT TEXT: Schedule\nACTION: CLICK\nVALUE: None", error="ELEMENT TYPE")
add(A, "ELEMENT: Careers link in the header\nELEMENT TYPE: LINK\nELEMENT TEXT: Careers\nVALUE: None", error="ACTION")

assert len(E) == 30, len(E)
with open("messy.json", "w") as f:
    json.dump(E, f, indent=1)
    f.write("\n")
